use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_captions, read_manifest, Split, CAPTIONS_FILE, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{mask_iou, vim_scores, InstanceEvalReport, MatteMetricsReport, DEFAULT_IOU, DEFAULT_SIGMA, DEFAULT_STEP};
use crate::scalar::Real;
use crate::seq::AlphaSequence;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub iou: f64,
    pub sigma: f64,
    pub step: f64,
    /// Restricts ground truth to one split when the root has a manifest.
    pub split: Option<Split>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { iou: DEFAULT_IOU, sigma: DEFAULT_SIGMA, step: DEFAULT_STEP, split: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub instance_id: usize,
    pub caption: String,
    pub mad: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: f64,
    /// IoU of the binarized matte against its own ground truth.
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample_id: String,
    pub mad: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: f64,
    pub rq: f64,
    pub tq: f64,
    pub mq: f64,
    pub vimq: f64,
    pub instances: Vec<InstanceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mad: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: f64,
    pub rq: f64,
    pub tq: f64,
    pub mq: f64,
    pub vimq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub options: EvalOptions,
    pub aggregate: Aggregate,
    pub samples: Vec<SampleRow>,
}

type Instances<F> = Vec<(usize, String, AlphaSequence<F>)>;

fn read_instances<F: Real>(dir: &Path) -> Result<Instances<F>> {
    read_captions(&dir.join(CAPTIONS_FILE))?
        .into_iter()
        .map(|(id, caption)| Ok((id, caption, io::read_alpha(&dir.join(format!("matte_{id}")))?)))
        .collect()
}

/// Directories under `root` holding a captions file.
fn sample_dirs(root: &Path) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for entry in fs::read_dir(root).map_err(Error::io(root))? {
        let entry = entry.map_err(Error::io(root))?;
        if entry.path().join(CAPTIONS_FILE).is_file() {
            out.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(out)
}

fn gt_ids(root: &Path, split: Option<Split>) -> Result<BTreeSet<String>> {
    let manifest = root.join(MANIFEST_FILE);
    if manifest.is_file() {
        Ok(read_manifest(&manifest)?.into_iter().filter(|r| split.is_none_or(|s| r.split == s)).map(|r| r.sample_id).collect())
    } else {
        sample_dirs(root)
    }
}

fn evaluate_sample<F: Real>(id: &str, pred_root: &Path, gt_root: &Path, opts: &EvalOptions) -> Result<SampleRow> {
    let preds = read_instances::<F>(&pred_root.join(id))?;
    let gts = read_instances::<F>(&gt_root.join(id))?;
    if gts.is_empty() {
        return Err(Error::Input(format!("sample {id} has no ground-truth instances")));
    }
    let th = F::lit(0.5);
    let mut instances = Vec::new();
    for (iid, caption, pred) in &preds {
        let Some((_, _, gt)) = gts.iter().find(|(g, _, _)| g == iid) else {
            return Err(Error::Input(format!("sample {id}: prediction for unknown instance {iid}")));
        };
        let m = MatteMetricsReport::compute(pred, gt, opts.sigma, opts.step)?;
        instances.push(InstanceRow {
            instance_id: *iid,
            caption: caption.clone(),
            mad: m.mad,
            mse: m.mse,
            grad: m.grad,
            conn: m.conn,
            iou: mask_iou(&pred.binarize(th), &gt.binarize(th)),
        });
    }
    let keyed = |v: &Instances<F>| v.iter().map(|(i, _, m)| (i.to_string(), m.clone())).collect::<Vec<_>>();
    let vim = if preds.is_empty() {
        InstanceEvalReport::from_scores(0.0, 0.0, 0.0, Vec::new())
    } else {
        vim_scores(&keyed(&preds), &keyed(&gts), opts.iou)?
    };
    let n = instances.len().max(1) as f64;
    let mean = |f: fn(&InstanceRow) -> f64| instances.iter().map(f).sum::<f64>() / n;
    Ok(SampleRow {
        sample_id: id.to_string(),
        mad: mean(|r| r.mad),
        mse: mean(|r| r.mse),
        grad: mean(|r| r.grad),
        conn: mean(|r| r.conn),
        rq: vim.rq,
        tq: vim.tq,
        mq: vim.mq,
        vimq: vim.vimq,
        instances,
    })
}

/// Scores every ground-truth sample against `pred_root`.
pub fn evaluate<F: Real>(pred_root: &Path, gt_root: &Path, opts: &EvalOptions) -> Result<EvalReport> {
    if !(opts.sigma > 0.0) || !(opts.step > 0.0 && opts.step <= 1.0) {
        return Err(Error::Config(format!("bad metric flags sigma={} step={}", opts.sigma, opts.step)));
    }
    let want = gt_ids(gt_root, opts.split)?;
    if want.is_empty() {
        return Err(Error::Input(format!("no ground-truth samples under {}", gt_root.display())));
    }
    let have = sample_dirs(pred_root)?;
    let missing: Vec<&String> = want.difference(&have).collect();
    let extra: Vec<&String> = have.difference(&want).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Input(format!("sample id mismatch: missing predictions {missing:?}, unexpected predictions {extra:?}")));
    }
    let ids: Vec<&String> = want.iter().collect();
    let samples = ids.par_iter().map(|id| evaluate_sample::<F>(id, pred_root, gt_root, opts)).collect::<Result<Vec<_>>>()?;
    let n = samples.len() as f64;
    let mean = |f: fn(&SampleRow) -> f64| samples.iter().map(f).sum::<f64>() / n;
    let (rq, tq, mq) = (mean(|r| r.rq), mean(|r| r.tq), mean(|r| r.mq));
    let aggregate = Aggregate {
        mad: mean(|r| r.mad),
        mse: mean(|r| r.mse),
        grad: mean(|r| r.grad),
        conn: mean(|r| r.conn),
        rq,
        tq,
        mq,
        vimq: rq * tq * mq / 10_000.0,
    };
    Ok(EvalReport { options: *opts, aggregate, samples })
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let row = |s: &mut String, name: &str, a: [f64; 8]| {
            let _ = writeln!(
                s,
                "{name:<16} {:>9.5} {:>9.5} {:>9.4} {:>7.4} {:>7.2} {:>7.2} {:>7.2} {:>7.2}",
                a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]
            );
        };
        let _ = writeln!(
            s,
            "{:<16} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "sample", "MAD", "MSE", "Grad", "Conn", "RQ", "TQ", "MQ", "VIMQ"
        );
        for r in &self.samples {
            row(&mut s, &r.sample_id, [r.mad, r.mse, r.grad, r.conn, r.rq, r.tq, r.mq, r.vimq]);
        }
        let a = &self.aggregate;
        row(&mut s, "mean", [a.mad, a.mse, a.grad, a.conn, a.rq, a.tq, a.mq, a.vimq]);
        s
    }

    /// Writes the JSON and text reports; returns the JSON path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let json = dir.join(REPORT_JSON);
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(Error::io(&json))?;
        let txt = dir.join(REPORT_TXT);
        fs::write(&txt, self.to_text()).map_err(Error::io(&txt))?;
        Ok(json)
    }
}
