use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::benchmark::{load_benchmark, simulate_benchmark, BenchmarkConfig, SequenceData, CONFIG_VERSION};
use crate::assoc::{run_sequence, solve_assignment, AssocConfig, AttrSource, CostMatrix};
use crate::error::{Error, Result};
use crate::fusion::{a1_raw, predict_attributes, train, Dataset, FusionParams, FusionStrategy, TrainConfig, TrainSample};
use crate::metrics::{evaluate_sequence, EvalOptions, MetricsReport, VerificationSet, REPORT_COLUMNS};
use crate::motio::{read_results, write_results};
use crate::attributes::AttributeVector;
use crate::distance::{cosine_distance_slices, iou};
use crate::types::TrackOutput;

/// Numeric report columns carried into the ablation matrix.
pub const ABLATION_METRICS: [&str; 12] =
    ["MOTA", "FN", "FP", "IDSW", "HOTA", "AssA", "IDR", "IDP", "IDF1", "DetA", "GT", "PRED"];

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Tracks every sequence, at most `jobs` at a time. Output order follows
/// `seqs` whatever `jobs` is.
pub fn track_benchmark(
    seqs: &[SequenceData],
    config: &AssocConfig,
    fusion: Option<&FusionParams>,
    jobs: usize,
) -> Result<Vec<(String, Vec<TrackOutput>)>> {
    config.validate()?;
    let run = |s: &SequenceData| run_sequence(&s.frames, config, fusion).map(|r| (s.name.clone(), r));
    if jobs <= 1 {
        return seqs.iter().map(run).collect();
    }
    with_pool(jobs, || seqs.par_iter().map(run).collect())?
}

/// Evaluates tracker output against the benchmark's ground truth. Sequences
/// without output count as empty predictions.
pub fn evaluate_benchmark(
    seqs: &[SequenceData],
    results: &[(String, Vec<TrackOutput>)],
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let by_name: BTreeMap<&str, &[TrackOutput]> = results.iter().map(|(n, r)| (n.as_str(), r.as_slice())).collect();
    for name in by_name.keys() {
        if !seqs.iter().any(|s| s.name == *name) {
            return Err(Error::Config(format!("results for unknown sequence {name}")));
        }
    }
    let rows = seqs
        .iter()
        .map(|s| evaluate_sequence(&s.name, &s.gt, by_name.get(s.name.as_str()).copied().unwrap_or(&[]), opts))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_rows(rows)
}

/// Writes one `<sequence>.txt` per result set.
pub fn write_results_dir(dir: &Path, results: &[(String, Vec<TrackOutput>)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, outputs) in results {
        let path = dir.join(format!("{name}.txt"));
        let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
        write_results(&mut w, outputs).map_err(|e| e.in_file(&path))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_results_dir(dir: &Path) -> Result<Vec<(String, Vec<TrackOutput>)>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let f = fs::File::open(p).map_err(|e| Error::io(p, e))?;
            Ok((name, read_results(BufReader::new(f)).map_err(|e| e.in_file(p))?))
        })
        .collect()
}

/// Crops for the fusion head: detections matched one-to-one to ground truth
/// at IoU >= 0.5, labelled by (sequence, identity). Identities without
/// attribute annotations are skipped.
pub fn training_set(seqs: &[SequenceData]) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut labels: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    for (si, s) in seqs.iter().enumerate() {
        let mut gt_by_frame: BTreeMap<u32, Vec<_>> = BTreeMap::new();
        for g in s.gt.iter().filter(|g| g.active) {
            gt_by_frame.entry(g.frame).or_default().push(g);
        }
        for (frame, dets) in &s.frames {
            let Some(gts) = gt_by_frame.get(frame) else { continue };
            let mut cost = CostMatrix::new(gts.len(), dets.len());
            for (i, g) in gts.iter().enumerate() {
                for (j, d) in dets.iter().enumerate() {
                    cost.set(i, j, 1.0 - iou(&g.bbox, &d.bbox));
                }
            }
            for (i, j) in solve_assignment(&cost, 0.5).matches {
                let g = gts[i];
                let Some(target) = s.attributes.get(&g.identity) else { continue };
                let next = labels.len();
                let label = *labels.entry((si, g.identity)).or_insert(next);
                samples.push(TrainSample {
                    embedding: dets[j].embedding.0.clone(),
                    attr_obs: dets[j].attr_obs.values().to_vec(),
                    label,
                    target: target.values().to_vec(),
                });
            }
        }
    }
    Dataset::new(samples)
}

/// Same-identity and different-identity crop pairs scored by cosine
/// similarity. At most `max_crops` crops are drawn (seeded); with `fusion`
/// the adapted embedding is compared instead of the raw one.
pub fn verification_set(
    seqs: &[SequenceData],
    fusion: Option<&FusionParams>,
    max_crops: usize,
    seed: u64,
) -> Result<VerificationSet> {
    let data = training_set(seqs)?;
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(max_crops);
    idx.sort_unstable();
    let feats = idx
        .iter()
        .map(|&i| {
            let s = &data.samples[i];
            let e = match fusion {
                None => s.embedding.clone(),
                Some(p) => {
                    let obs = AttributeVector::prob_from_slice(&s.attr_obs)?;
                    let a1 = a1_raw(p, &s.embedding, &obs)?;
                    predict_attributes(&s.embedding, &a1, p.strategy, p)?.1 .0
                }
            };
            Ok((s.label, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut set = VerificationSet { positives: Vec::new(), negatives: Vec::new() };
    for (i, (la, ea)) in feats.iter().enumerate() {
        for (lb, eb) in &feats[i + 1..] {
            let sim = 1.0 - cosine_distance_slices(ea, eb)?;
            if la == lb { set.positives.push(sim) } else { set.negatives.push(sim) }
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub assoc: AssocConfig,
}

impl Variant {
    fn needs_fusion(&self) -> bool {
        self.assoc.attr_source == AttrSource::Predicted
    }
}

/// An ablation run: variants compared over seeds on one benchmark.
///
/// With `benchmark` set, the sequences on disk are used for every seed and the
/// seed only reaches training. With `generate` set, each seed simulates its own
/// benchmark in memory (the generator seed is replaced by the run seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub version: u32,
    pub benchmark: Option<PathBuf>,
    pub generate: Option<BenchmarkConfig>,
    pub seeds: Vec<u64>,
    pub strategy: FusionStrategy,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub variants: Vec<Variant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub iou_threshold: f64,
    pub suppress_ignored_fp: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let o = EvalOptions::default();
        EvalSettings { iou_threshold: o.iou_threshold, suppress_ignored_fp: o.suppress_ignored_fp }
    }
}

impl EvalSettings {
    pub fn options(&self) -> EvalOptions {
        EvalOptions { iou_threshold: self.iou_threshold, suppress_ignored_fp: self.suppress_ignored_fp }
    }
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            version: CONFIG_VERSION,
            benchmark: None,
            generate: None,
            seeds: vec![0],
            strategy: FusionStrategy::default(),
            train: TrainConfig::default(),
            eval: EvalSettings::default(),
            variants: Vec::new(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported config version {}", self.version)));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("no variants".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate variant name {}", w[0])));
        }
        for v in &self.variants {
            if v.name.is_empty() || v.name.contains(['/', '\\', ',']) {
                return Err(Error::Config(format!("invalid variant name {:?}", v.name)));
            }
            v.assoc.validate()?;
        }
        match (&self.benchmark, &self.generate) {
            (Some(_), Some(_)) => return Err(Error::Config("set either benchmark or generate, not both".into())),
            (None, None) => return Err(Error::Config("no benchmark: set benchmark or generate".into())),
            (None, Some(g)) => g.validate()?,
            (Some(_), None) => {}
        }
        if self.variants.iter().any(Variant::needs_fusion) {
            self.train.validate()?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

/// Variant x metric matrix of medians over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<(String, [f64; 12])>,
    /// Per-run report CSVs, `(variant, seed, csv)`.
    pub runs: Vec<(String, u64, String)>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Reads the aggregate row of a report CSV.
pub fn aggregate_from_csv(csv: &str) -> Result<[f64; 12]> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    if header != REPORT_COLUMNS {
        return Err(Error::parse(1, "unexpected report header"));
    }
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.first() != Some(&"AGGREGATE") {
            continue;
        }
        if cells.len() != REPORT_COLUMNS.len() {
            return Err(Error::parse(i + 2, "wrong number of columns"));
        }
        let mut out = [0.0; 12];
        for (o, c) in out.iter_mut().zip(&cells[1..]) {
            *o = c.parse().map_err(|_| Error::parse(i + 2, format!("bad number {c:?}")))?;
        }
        return Ok(out);
    }
    Err(Error::parse(0, "no AGGREGATE row"))
}

impl AblationReport {
    /// Builds the matrix from per-run CSV text alone; variant order is the
    /// order of first appearance.
    pub fn from_runs(runs: Vec<(String, u64, String)>) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut values: BTreeMap<String, Vec<[f64; 12]>> = BTreeMap::new();
        for (variant, _, csv) in &runs {
            if !order.contains(variant) {
                order.push(variant.clone());
            }
            values.entry(variant.clone()).or_default().push(aggregate_from_csv(csv)?);
        }
        let rows = order
            .into_iter()
            .map(|name| {
                let vals = &values[&name];
                let mut row = [0.0; 12];
                for (k, r) in row.iter_mut().enumerate() {
                    let mut col: Vec<f64> = vals.iter().map(|v| v[k]).collect();
                    *r = median(&mut col);
                }
                (name, row)
            })
            .collect();
        Ok(AblationReport { rows, runs })
    }

    pub fn metric(&self, variant: &str, metric: &str) -> Option<f64> {
        let k = ABLATION_METRICS.iter().position(|m| *m == metric)?;
        self.rows.iter().find(|(n, _)| n == variant).map(|(_, r)| r[k])
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("variant,{}\n", ABLATION_METRICS.join(","));
        for (name, row) in &self.rows {
            out.push_str(name);
            for v in row {
                let _ = write!(out, ",{v:.3}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let w0 = self.rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("variant".len());
        let cells: Vec<Vec<String>> =
            self.rows.iter().map(|(_, r)| r.iter().map(|v| format!("{v:.2}")).collect()).collect();
        let widths: Vec<usize> = (0..12)
            .map(|k| cells.iter().map(|c| c[k].len()).max().unwrap_or(0).max(ABLATION_METRICS[k].len()))
            .collect();
        let mut out = format!("{:<w0$}", "variant");
        for (m, w) in ABLATION_METRICS.iter().zip(&widths) {
            let _ = write!(out, "  {m:>w$}");
        }
        out.push('\n');
        for ((name, _), row) in self.rows.iter().zip(&cells) {
            let _ = write!(out, "{name:<w0$}");
            for (c, w) in row.iter().zip(&widths) {
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
        }
        out
    }
}

fn run_seed(spec: &ExperimentSpec, seqs: &[SequenceData], seed: u64, jobs: usize) -> Result<Vec<(String, u64, String)>> {
    let params = if spec.variants.iter().any(Variant::needs_fusion) {
        let data = training_set(seqs)?;
        let cfg = TrainConfig { seed, ..spec.train.clone() };
        Some(train(&data, &cfg, spec.strategy)?.0)
    } else {
        None
    };
    spec.variants
        .iter()
        .map(|v| {
            let fusion = if v.needs_fusion() { params.as_ref() } else { None };
            let run = || -> Result<String> {
                let results = track_benchmark(seqs, &v.assoc, fusion, jobs)?;
                Ok(evaluate_benchmark(seqs, &results, &spec.eval.options())?.to_csv())
            };
            run().map(|csv| (v.name.clone(), seed, csv))
                .map_err(|e| Error::Run { variant: v.name.clone(), seed, source: Box::new(e) })
        })
        .collect()
}

/// Runs every (seed, variant) pair. When `out` is given, per-run CSVs go to
/// `out/runs/<variant>/seed-<seed>.csv` and the matrix to `out/ablation.csv`.
pub fn run_ablation(spec: &ExperimentSpec, out: Option<&Path>, jobs: usize) -> Result<AblationReport> {
    spec.validate()?;
    let fixed = match &spec.benchmark {
        Some(dir) => Some(load_benchmark(dir)?),
        None => None,
    };
    let mut runs = Vec::new();
    for &seed in &spec.seeds {
        let generated;
        let seqs = match (&fixed, &spec.generate) {
            (Some(s), _) => s,
            (None, Some(g)) => {
                generated = simulate_benchmark(&BenchmarkConfig { seed, ..g.clone() })?;
                &generated
            }
            (None, None) => unreachable!("validated"),
        };
        runs.extend(run_seed(spec, seqs, seed, jobs).map_err(|e| match e {
            Error::Run { .. } => e,
            other => Error::Run { variant: "training".into(), seed, source: Box::new(other) },
        })?);
    }
    let report = AblationReport::from_runs(runs)?;
    if let Some(dir) = out {
        for (variant, seed, csv) in &report.runs {
            let vd = dir.join("runs").join(variant);
            fs::create_dir_all(&vd).map_err(|e| Error::io(&vd, e))?;
            let p = vd.join(format!("seed-{seed}.csv"));
            fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
        }
        let p = dir.join("ablation.csv");
        fs::write(&p, report.to_csv()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}
