//! Per-example gate values of a trained gated model and their summary
//! statistics.
//!
//! Records are grouped twice: by meta tag (`meta:none`, `meta:image_signal`,
//! `meta:text_signal`; ground truth on synthetic data) and by label
//! (`label:0`, `label:1`, `label:255`; the only proxy available on real
//! data). The standard deviation is the population one.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::embedding_store::{make_batches, Dataset, Label, MetaTag};
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelKind};
use crate::nn_core::{Mode, ParameterSet};
use crate::trainer::EVAL_BATCH;

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateSample {
    pub id: u64,
    pub label: Label,
    pub meta_tag: MetaTag,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateReport {
    pub per_example: Vec<GateSample>,
    pub overall_mean: f64,
    pub overall_std: f64,
    pub group_means: BTreeMap<String, f64>,
    /// Counts over 20 equal bins of [0, 1]; g = 1 falls in the last bin.
    pub histogram: [usize; HISTOGRAM_BINS],
}

impl GateReport {
    pub fn from_samples(per_example: Vec<GateSample>) -> Self {
        let n = per_example.len() as f64;
        let (overall_mean, overall_std) = if per_example.is_empty() {
            (0.0, 0.0)
        } else {
            let mean = per_example.iter().map(|s| s.g).sum::<f64>() / n;
            let var = per_example
                .iter()
                .map(|s| (s.g - mean).powi(2))
                .sum::<f64>()
                / n;
            (mean, var.sqrt())
        };

        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        let mut histogram = [0usize; HISTOGRAM_BINS];
        for s in &per_example {
            for key in [
                format!("meta:{}", s.meta_tag),
                format!("label:{}", s.label.as_u8()),
            ] {
                let e = sums.entry(key).or_default();
                e.0 += s.g;
                e.1 += 1;
            }
            let bin = ((s.g * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
            histogram[bin] += 1;
        }
        let group_means = sums
            .into_iter()
            .map(|(k, (sum, count))| (k, sum / count as f64))
            .collect();

        Self {
            per_example,
            overall_mean,
            overall_std,
            group_means,
            histogram,
        }
    }

    pub fn group_mean(&self, key: &str) -> Option<f64> {
        self.group_means.get(key).copied()
    }
}

/// Eval-mode gate values for every record, in file order.
pub fn gate_report(
    ds: &Dataset,
    params: &ParameterSet<f32>,
    arch: &Architecture,
) -> Result<GateReport> {
    if arch.kind != ModelKind::GatedClip {
        return Err(Error::NoGate(arch.kind.to_string()));
    }
    arch.check_params(params)?;
    if ds.is_empty() {
        return Ok(GateReport::from_samples(Vec::new()));
    }
    let mut samples = Vec::with_capacity(ds.len());
    let mut records = ds.records().iter();
    for batch in make_batches(ds, EVAL_BATCH, false, 0.0, 0, 0)? {
        let pass = arch.forward(batch.image.view(), batch.text.view(), params, Mode::Eval, 0)?;
        let gates = pass
            .gate_values()
            .ok_or_else(|| Error::NoGate(arch.kind.to_string()))?;
        for (&g, r) in gates.iter().zip(records.by_ref()) {
            samples.push(GateSample {
                id: r.id,
                label: r.label,
                meta_tag: r.meta_tag,
                g: g as f64,
            });
        }
    }
    Ok(GateReport::from_samples(samples))
}

/// `id,label,meta_tag,g` rows (g to 6 decimals) followed by `#` summary lines.
pub fn write_gate_csv(report: &GateReport, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "label", "meta_tag", "g"])?;
    for s in &report.per_example {
        w.write_record([
            s.id.to_string(),
            s.label.as_u8().to_string(),
            s.meta_tag.to_string(),
            format!("{:.6}", s.g),
        ])?;
    }
    let io = |e| Error::io(Path::new("<gate csv>"), e);
    let mut out = w.into_inner().map_err(|e| io(e.into_error()))?;
    writeln!(out, "# n={}", report.per_example.len()).map_err(io)?;
    writeln!(out, "# overall_mean={:.6}", report.overall_mean).map_err(io)?;
    writeln!(out, "# overall_std={:.6}", report.overall_std).map_err(io)?;
    for (k, v) in &report.group_means {
        writeln!(out, "# group_mean[{k}]={v:.6}").map_err(io)?;
    }
    let hist: Vec<String> = report.histogram.iter().map(|c| c.to_string()).collect();
    writeln!(out, "# histogram={}", hist.join(" ")).map_err(io)?;
    out.flush().map_err(io)
}

pub fn export_gate_csv(report: &GateReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_gate_csv(report, BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_store::test_support::random_dataset;
    use crate::embedding_store::{generate_synthetic, SyntheticConfig};
    use crate::model::ModelConfig;
    use proptest::prelude::*;

    fn small_arch(kind: ModelKind) -> Architecture {
        let config = ModelConfig {
            dim_in: 8,
            proj_hidden: 6,
            proj_out: 4,
            gate_hidden: 3,
            cls_hidden: 3,
            ..ModelConfig::default()
        };
        Architecture::new(kind, config).unwrap()
    }

    fn sample(g: f64) -> GateSample {
        GateSample {
            id: 0,
            label: Label::Benign,
            meta_tag: MetaTag::None,
            g,
        }
    }

    #[test]
    fn zero_parameters_give_one_half() {
        let arch = small_arch(ModelKind::GatedClip);
        let params = ParameterSet::from_layout(&arch.layers());
        let report = gate_report(&random_dataset(30, 8, false, 1), &params, &arch).unwrap();
        assert!(report.per_example.iter().all(|s| s.g == 0.5));
        assert_eq!(report.overall_std, 0.0);
        assert_eq!(report.histogram[10], 30);
    }

    #[test]
    fn single_record() {
        let r = GateReport::from_samples(vec![sample(0.3)]);
        assert_eq!((r.overall_mean, r.overall_std), (0.3, 0.0));
        assert_eq!(r.group_mean("meta:none"), Some(0.3));
        assert_eq!(r.group_mean("label:0"), Some(0.3));
    }

    #[test]
    fn baseline_has_no_gate() {
        let arch = small_arch(ModelKind::Baseline);
        let params = arch.init_params::<f32>(0).unwrap();
        let ds = random_dataset(4, 8, false, 1);
        assert!(matches!(
            gate_report(&ds, &params, &arch),
            Err(Error::NoGate(_))
        ));
    }

    #[test]
    fn groups_follow_tags_and_labels() {
        let arch = small_arch(ModelKind::GatedClip);
        let params = arch.init_params::<f32>(2).unwrap();
        let ds = generate_synthetic(&SyntheticConfig {
            n: 40,
            dim: 8,
            mode: crate::embedding_store::SyntheticMode::SingleModality,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let report = gate_report(&ds, &params, &arch).unwrap();
        let ids: Vec<u64> = ds.records().iter().map(|r| r.id).collect();
        let got: Vec<u64> = report.per_example.iter().map(|s| s.id).collect();
        assert_eq!(ids, got);
        let image: Vec<f64> = report
            .per_example
            .iter()
            .filter(|s| s.meta_tag == MetaTag::ImageSignal)
            .map(|s| s.g)
            .collect();
        let mean = image.iter().sum::<f64>() / image.len() as f64;
        assert!((report.group_mean("meta:image_signal").unwrap() - mean).abs() < 1e-12);
        assert!(report.group_mean("label:1").is_some());
        assert!(report.group_mean("meta:none").is_none());
        assert_eq!(report, gate_report(&ds, &params, &arch).unwrap());
    }

    #[test]
    fn csv_contract() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        export_gate_csv(&GateReport::from_samples(Vec::new()), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data, vec!["id,label,meta_tag,g"]);

        let samples: Vec<GateSample> = (0..7)
            .map(|i| GateSample {
                id: i * 10,
                label: Label::from_bit(i % 2 == 0),
                meta_tag: MetaTag::TextSignal,
                g: (i as f64 * 0.1373).fract(),
            })
            .collect();
        let report = GateReport::from_samples(samples);
        export_gate_csv(&report, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 7);
        for (row, s) in rows.iter().zip(&report.per_example) {
            assert_eq!(row[0].parse::<u64>().unwrap(), s.id);
            assert_eq!(&row[2], "text_signal");
            assert!((row[3].parse::<f64>().unwrap() - s.g).abs() <= 5e-7);
        }
        assert!(text.contains("# overall_std="));
    }

    proptest! {
        #[test]
        fn statistics_match_two_pass(gs in proptest::collection::vec(0.0f64..=1.0, 1..200)) {
            let r = GateReport::from_samples(gs.iter().map(|&g| sample(g)).collect());
            let n = gs.len() as f64;
            let mean = gs.iter().sum::<f64>() / n;
            let std = (gs.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n).sqrt();
            prop_assert!((r.overall_mean - mean).abs() < 1e-9);
            prop_assert!((r.overall_std - std).abs() < 1e-9);
            prop_assert!(r.overall_std >= 0.0);
            prop_assert_eq!(r.histogram.iter().sum::<usize>(), gs.len());
        }
    }
}
