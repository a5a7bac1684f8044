use serde::Serialize;

use super::{Adapter, ExtraConfig, ModelConfig};
use crate::error::Result;
use crate::neck::{BottleneckCspF, DetectHead, DownC, PanNeck};
use crate::nn::{ConvUnit, Cost};
use crate::swin::{PatchEmbed, PatchMerging, SwinBlock, SwinConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub module: String,
    pub params: usize,
    pub macs: u64,
}

/// Parameter and multiply-accumulate accounting at one input resolution.
///
/// Only matrix products and convolutions are counted; normalization,
/// activations, pooling and element-wise ops are free. FLOPs = 2·MACs.
/// Window attention is charged on the padded grid, `2·N²·C` per window for
/// the score and value products, plus the qkv and output projections.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSummary {
    pub name: String,
    pub resolution: usize,
    pub rows: Vec<SummaryRow>,
    pub params: usize,
    pub macs: u64,
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Swin rows (patch embedding and one per stage) and the stage grid extents.
pub(crate) fn backbone_rows(cfg: &SwinConfig, h: usize, w: usize) -> (Vec<(String, Cost)>, Vec<(usize, usize)>) {
    let p = cfg.patch_size;
    let (mut gh, mut gw) = (ceil_div(h, p), ceil_div(w, p));
    let pe = cfg.patch_embed();
    let embed_macs = (pe.embed_dim * pe.in_channels * p * p * gh * gw) as u64;
    let mut rows = vec![("backbone.patch_embed".to_string(), Cost::new(PatchEmbed::<f32>::param_count(pe), embed_macs))];
    let mut extents = Vec::new();
    for (s, st) in cfg.stages().iter().enumerate() {
        let mut cost = Cost::default();
        if s > 0 {
            gh = ceil_div(gh, 2);
            gw = ceil_div(gw, 2);
            let prev = st.dim / 2;
            cost += Cost::new(PatchMerging::<f32>::param_count(prev), (gh * gw * 4 * prev * 2 * prev) as u64);
        }
        let (c, m) = (st.dim, st.window);
        let (hp, wp) = (ceil_div(gh, m) * m, ceil_div(gw, m) * m);
        let padded = hp * wp;
        let windows = padded / (m * m);
        let n = m * m;
        let hidden = cfg.mlp_ratio * c;
        let attn = padded * c * 3 * c + windows * 2 * n * n * c + padded * c * c;
        let mlp = gh * gw * 2 * c * hidden;
        let block = Cost::new(SwinBlock::<f32>::param_count(c, st.heads, m, cfg.mlp_ratio), (attn + mlp) as u64);
        for _ in 0..st.depth {
            cost += block;
        }
        rows.push((format!("backbone.stages.{s}"), cost));
        extents.push((gh, gw));
    }
    (rows, extents)
}

impl ModelSummary {
    /// Analytic accounting of `cfg` on a `resolution × resolution` input.
    pub fn of(cfg: &ModelConfig, resolution: usize) -> Result<Self> {
        cfg.validate()?;
        let (mut rows, stage_extents) = backbone_rows(&cfg.backbone, resolution, resolution);
        let mut extents = Vec::new();
        for (i, tap) in cfg.taps.iter().enumerate() {
            let (h, w) = stage_extents[tap.stage];
            rows.push((format!("adapters.{i}"), Adapter::<f32>::cost(cfg.backbone.stage_dim(tap.stage), tap, h, w)));
            extents.push((h, w));
        }
        let levels = cfg.level_channels();
        let c_in = levels[levels.len() - 2];
        let (h, w) = *extents.last().expect("validated taps");
        let (extra, eh, ew) = match cfg.extra {
            ExtraConfig::B6 { channels, depth } => {
                let (c, oh, ow) = ConvUnit::<f32>::cost(c_in, channels, 3, 2, h, w);
                (c + BottleneckCspF::<f32>::cost(channels, channels, depth, oh, ow), oh, ow)
            }
            ExtraConfig::DownC { channels } => DownC::<f32>::cost(c_in, channels, h, w),
        };
        rows.push(("extra".into(), extra));
        extents.push((eh, ew));
        for (name, c) in PanNeck::<f32>::cost(&levels, &extents, &cfg.neck) {
            rows.push((format!("neck.{name}"), c));
        }
        for (l, (&c_in, &c_mid)) in cfg.neck.channels.iter().zip(&cfg.head.channels).enumerate() {
            let (h, w) = extents[l];
            rows.push((format!("head.levels.{l}"), DetectHead::<f32>::level_cost(c_in, c_mid, &cfg.head, h, w)));
        }
        let total: Cost = rows.iter().map(|r| r.1).sum();
        Ok(Self {
            name: cfg.name.clone(),
            resolution,
            rows: rows.into_iter().map(|(module, c)| SummaryRow { module, params: c.params, macs: c.macs }).collect(),
            params: total.params,
            macs: total.macs,
        })
    }

    pub fn flops(&self) -> u64 {
        2 * self.macs
    }

    /// Rows whose module name starts with `prefix`, summed.
    pub fn subtotal(&self, prefix: &str) -> Cost {
        self.rows.iter().filter(|r| r.module.starts_with(prefix)).map(|r| Cost::new(r.params, r.macs)).sum()
    }

    /// Aligned text: a model line in the `Model / Size / FLOPs / # parameters` layout,
    /// then the per-module breakdown.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<16} {:>6} {:>10} {:>14}\n", "Model", "Size", "FLOPs", "# parameters"));
        s.push_str(&format!(
            "{:<16} {:>6} {:>10} {:>14}\n\n",
            self.name,
            self.resolution,
            format!("{:.1}G", self.flops() as f64 / 1e9),
            format!("{:.1}M", self.params as f64 / 1e6)
        ));
        s.push_str(&format!("{:<28} {:>14} {:>16} {:>12}\n", "module", "params", "MACs", "GFLOPs"));
        for r in &self.rows {
            s.push_str(&format!("{:<28} {:>14} {:>16} {:>12.3}\n", r.module, r.params, r.macs, 2.0 * r.macs as f64 / 1e9));
        }
        s.push_str(&format!("{:<28} {:>14} {:>16} {:>12.3}\n", "total", self.params, self.macs, self.flops() as f64 / 1e9));
        s
    }

    /// CSV rows `module,params,macs,flops`, ending with a `total` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["module", "params", "macs", "flops"])?;
        for r in &self.rows {
            w.write_record([r.module.clone(), r.params.to_string(), r.macs.to_string(), (2 * r.macs).to_string()])?;
        }
        w.write_record(["total".to_string(), self.params.to_string(), self.macs.to_string(), self.flops().to_string()])?;
        let bytes = w.into_inner().map_err(|e| crate::Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{VariantSpec, YotoR};
    use crate::nn::Module;
    use crate::tensor::counters::count_macs;
    use crate::tensor::init::Initializer;
    use crate::Tensor;

    #[test]
    fn toy_summary_matches_execution() {
        for v in VariantSpec::NAMED {
            let cfg = ModelConfig::toy(v, 2).unwrap();
            let m = YotoR::<f32>::build(&cfg, 0).unwrap();
            for res in [64, 128, 192] {
                let img: Tensor<f32> = Initializer::new(1).normal(&[1, 3, res, res], 0.0, 1.0);
                let (_, macs) = count_macs(|| m.forward(&img).unwrap());
                let s = ModelSummary::of(&cfg, res).unwrap();
                assert_eq!(s.params, m.param_count(), "{v}");
                assert_eq!(s.macs, macs, "{v} at {res}");
                let rows: usize = s.rows.iter().map(|r| r.params).sum();
                assert_eq!(rows, s.params);
            }
        }
    }

    #[test]
    fn table_and_csv_render() {
        let s = ModelSummary::of(&ModelConfig::toy(VariantSpec::TP5, 1).unwrap(), 128).unwrap();
        assert!(s.to_table().contains("# parameters"));
        let csv = s.to_csv().unwrap();
        assert_eq!(csv.lines().count(), s.rows.len() + 2);
    }
}
