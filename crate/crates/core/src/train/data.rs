use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TargetBox;
use crate::detect::{letterbox, Image, PAD_FILL};
use crate::error::{Error, Result};
use crate::eval::{Annotation, Category, CocoDataset, ImageInfo};

/// One training image with its boxes (`TargetBox::image` is ignored here and
/// set when a batch is formed).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub boxes: Vec<TargetBox>,
}

impl Sample {
    /// Letterboxes to a `target` square and maps the boxes along.
    pub fn letterboxed(&self, target: usize) -> Result<Sample> {
        let (image, info) = letterbox(&self.image, target, PAD_FILL)?;
        let boxes = self.boxes.iter().map(|b| TargetBox { bbox: info.map_box(b.bbox), ..b.clone() }).collect();
        Ok(Sample { image, boxes })
    }
}

const CLASS_COLORS: [[f32; 3]; 4] = [[0.9, 0.15, 0.1], [0.1, 0.25, 0.95], [0.1, 0.8, 0.2], [0.95, 0.85, 0.1]];

/// `n` images of `size²` pixels, each with 2–4 solid, non-overlapping
/// rectangles of `nc` colour-coded classes on a noisy grey background.
pub fn synthetic_dataset(n: usize, size: usize, nc: usize, seed: u64) -> Vec<Sample> {
    assert!((1..=CLASS_COLORS.len()).contains(&nc), "1..=4 classes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = ((size as f64 * 0.12).max(4.0), size as f64 * 0.42);
    (0..n)
        .map(|_| {
            let mut image = Image::filled(size, size, 0.0);
            for v in &mut image.data {
                *v = 0.45 + rng.random_range(-0.04..0.04);
            }
            let count = rng.random_range(2..=4);
            // One rectangle per quadrant, centered in the quadrant's outer half. No two
            // objects then share a target cell at any stride up to size/2.
            let mut quadrants = [0usize, 1, 2, 3];
            quadrants.shuffle(&mut rng);
            let half = size as f64 / 2.0;
            let mut boxes: Vec<TargetBox> = Vec::new();
            for (i, &q) in quadrants[..count].iter().enumerate() {
                let mut side = || {
                    let len = rng.random_range(lo..hi.min(half - 6.0)).round();
                    let from_edge = rng.random_range(len / 2.0 + 1.0..half / 2.0 - 1.0);
                    (len, from_edge)
                };
                let ((w, ux), (h, uy)) = (side(), side());
                let cx = if q % 2 == 0 { ux } else { size as f64 - ux };
                let cy = if q / 2 == 0 { uy } else { size as f64 - uy };
                let (x1, y1) = ((cx - w / 2.0).round(), (cy - h / 2.0).round());
                boxes.push(TargetBox { image: 0, class: i % nc, bbox: [x1, y1, x1 + w, y1 + h] });
            }
            // shuffle class order so the first box is not always class 0
            if rng.random_bool(0.5) {
                for b in &mut boxes {
                    b.class = (b.class + 1) % nc;
                }
            }
            for b in &boxes {
                let color = CLASS_COLORS[b.class];
                for y in b.bbox[1] as usize..b.bbox[3] as usize {
                    for x in b.bbox[0] as usize..b.bbox[2] as usize {
                        for (ch, &c) in color.iter().enumerate() {
                            image.set(ch, y, x, c);
                        }
                    }
                }
            }
            Sample { image, boxes }
        })
        .collect()
}

/// COCO document for `samples`: image ids from 1, category id = class + 1.
pub fn to_coco(samples: &[Sample], nc: usize) -> CocoDataset {
    let mut ds = CocoDataset {
        categories: (0..nc).map(|c| Category { id: c as u64 + 1, name: format!("class{c}") }).collect(),
        ..Default::default()
    };
    for (i, s) in samples.iter().enumerate() {
        let image_id = i as u64 + 1;
        ds.images.push(ImageInfo { id: image_id, width: s.image.width as u32, height: s.image.height as u32, file_name: format!("{image_id:04}.png") });
        for b in &s.boxes {
            let [x1, y1, x2, y2] = b.bbox;
            ds.annotations.push(Annotation {
                id: ds.annotations.len() as u64 + 1,
                image_id,
                category_id: b.class as u64 + 1,
                bbox: [x1, y1, x2 - x1, y2 - y1],
                area: Some((x2 - x1) * (y2 - y1)),
                iscrowd: 0,
            });
        }
    }
    ds
}

/// Writes `annotations.json` plus one PNG per image into `dir`.
pub fn save_dataset(dir: &Path, samples: &[Sample], nc: usize) -> Result<CocoDataset> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ds = to_coco(samples, nc);
    for (s, info) in samples.iter().zip(&ds.images) {
        s.image.save(&dir.join(&info.file_name))?;
    }
    let path = dir.join("annotations.json");
    std::fs::write(&path, serde_json::to_string_pretty(&ds)?).map_err(|e| Error::io(&path, e))?;
    Ok(ds)
}

/// Reads a COCO document and its images (paths relative to the JSON file).
/// Classes are category ids in ascending order; crowd boxes are dropped.
pub fn load_dataset(json: &Path) -> Result<(Vec<Sample>, CocoDataset)> {
    let text = std::fs::read_to_string(json).map_err(|e| Error::io(json, e))?;
    let ds: CocoDataset = serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", json.display())))?;
    let mut cats: Vec<u64> = ds.categories.iter().map(|c| c.id).collect();
    cats.sort_unstable();
    let root = json.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::with_capacity(ds.images.len());
    for info in &ds.images {
        let image = Image::load(&root.join(&info.file_name))?;
        let mut boxes = Vec::new();
        for a in ds.annotations.iter().filter(|a| a.image_id == info.id && a.iscrowd == 0) {
            let class = cats
                .binary_search(&a.category_id)
                .map_err(|_| Error::Dataset(format!("annotation {} has unknown category_id {}", a.id, a.category_id)))?;
            let [x, y, w, h] = a.bbox;
            boxes.push(TargetBox { image: 0, class, bbox: [x, y, x + w, y + h] });
        }
        samples.push(Sample { image, boxes });
    }
    Ok((samples, ds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_set_is_deterministic_and_well_formed() {
        let a = synthetic_dataset(8, 128, 2, 5);
        assert_eq!(a, synthetic_dataset(8, 128, 2, 5));
        for s in &a {
            assert!((2..=4).contains(&s.boxes.len()));
            for b in &s.boxes {
                assert!(b.bbox[2] <= 128.0 && b.bbox[3] <= 128.0 && b.class < 2);
            }
        }
        assert!(a.iter().flat_map(|s| &s.boxes).any(|b| b.class == 1));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synthetic_dataset(3, 64, 2, 1);
        save_dataset(dir.path(), &samples, 2).unwrap();
        let (back, ds) = load_dataset(&dir.path().join("annotations.json")).unwrap();
        assert_eq!(ds.images.len(), 3);
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.boxes, b.boxes);
            let err = a.image.data.iter().zip(&b.image.data).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
            assert!(err <= 0.5 / 255.0 + 1e-6);
        }
    }
}
