//! COCO box evaluation of a small hand-made result set.
//!
//! ```text
//! cargo run --example coco_eval
//! ```

use yotor::detect::CocoResult;
use yotor::eval::{evaluate, Annotation, Category, CocoDataset, EvalConfig, GroundTruth, ImageInfo};

fn main() -> yotor::Result<()> {
    let gt_boxes = [
        (1, 1, [10.0, 10.0, 30.0, 30.0]),
        (1, 2, [60.0, 20.0, 100.0, 80.0]),
        (2, 1, [5.0, 40.0, 12.0, 10.0]),
        (2, 2, [0.0, 0.0, 200.0, 150.0]),
    ];
    let ds = CocoDataset {
        images: (1..=2).map(|id| ImageInfo { id, width: 256, height: 256, file_name: format!("{id}.png") }).collect(),
        annotations: gt_boxes
            .iter()
            .zip(1..)
            .map(|(&(image_id, category_id, bbox), id)| Annotation { id, image_id, category_id, bbox, area: None, iscrowd: 0 })
            .collect(),
        categories: vec![Category { id: 1, name: "square".into() }, Category { id: 2, name: "slab".into() }],
    };
    let dets = vec![
        CocoResult { image_id: 1, category_id: 1, bbox: [11.0, 9.0, 30.0, 31.0], score: 0.9 },
        CocoResult { image_id: 1, category_id: 2, bbox: [70.0, 25.0, 90.0, 70.0], score: 0.8 },
        CocoResult { image_id: 2, category_id: 1, bbox: [100.0, 100.0, 20.0, 20.0], score: 0.7 },
        CocoResult { image_id: 2, category_id: 1, bbox: [5.0, 41.0, 12.0, 9.0], score: 0.6 },
        CocoResult { image_id: 2, category_id: 2, bbox: [2.0, 0.0, 195.0, 150.0], score: 0.95 },
    ];
    let gt = GroundTruth::from_dataset(&ds)?;
    let report = evaluate(&gt, &dets, &EvalConfig::default())?;
    print!("{}", report.to_table());
    Ok(())
}
