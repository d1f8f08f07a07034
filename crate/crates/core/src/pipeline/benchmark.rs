use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::features::{read_features, write_features};
use crate::attributes::AttributeVector;
use crate::error::{Error, Result};
use crate::motio::{read_attributes, read_detections, read_ground_truth, write_attributes, write_detections, write_ground_truth, DetRecord};
use crate::synthgen::{derive_seed, observe_frame, simulate_named, WorldConfig};
use crate::types::{Detection, GtEntry};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub version: u32,
    pub sequences: usize,
    /// Base seed; sequence `i` uses a seed derived from it and `i`.
    pub seed: u64,
    pub world: WorldConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig { version: CONFIG_VERSION, sequences: 20, seed: 0, world: WorldConfig::default() }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported config version {}", self.version)));
        }
        if self.sequences == 0 {
            return Err(Error::Config("sequences must be at least 1".into()));
        }
        self.world.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: BenchmarkConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn sequence_world(&self, index: usize) -> WorldConfig {
        WorldConfig { seed: derive_seed(self.seed, index as u64), ..self.world.clone() }
    }
}

/// One benchmark sequence as the tracker and the evaluator see it.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceData {
    pub name: String,
    pub n_frames: u32,
    pub gt: Vec<GtEntry>,
    pub attributes: BTreeMap<u32, AttributeVector>,
    /// Detections of every frame `1..=n_frames`, empty frames included.
    pub frames: Vec<(u32, Vec<Detection>)>,
    /// frame -> identity -> occluded fraction
    pub occlusion: BTreeMap<u32, BTreeMap<u32, f64>>,
}

impl SequenceData {
    pub fn detection_count(&self) -> usize {
        self.frames.iter().map(|(_, d)| d.len()).sum()
    }
}

/// Simulates every sequence of a benchmark in memory.
pub fn simulate_benchmark(config: &BenchmarkConfig) -> Result<Vec<SequenceData>> {
    config.validate()?;
    (0..config.sequences)
        .map(|i| {
            let world = config.sequence_world(i);
            let bundle = simulate_named(&world, format!("seq-{i:02}"))?;
            let frames = (1..=bundle.n_frames()).map(|f| (f, observe_frame(&bundle, f, &world))).collect();
            Ok(SequenceData {
                name: bundle.name.clone(),
                n_frames: bundle.n_frames(),
                attributes: bundle.attributes(),
                gt: bundle.gt,
                frames,
                occlusion: bundle.occlusion,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameMeta {
    frame: u32,
    occlusion: BTreeMap<u32, f64>,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    Ok(BufReader::new(fs::File::open(path).map_err(|e| Error::io(path, e))?))
}

/// Writes `benchmark.toml` and one directory per sequence.
pub fn write_benchmark(config: &BenchmarkConfig, seqs: &[SequenceData], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg_path = dir.join("benchmark.toml");
    fs::write(&cfg_path, config.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    for s in seqs {
        let sd = dir.join(&s.name);
        fs::create_dir_all(&sd).map_err(|e| Error::io(&sd, e))?;
        let in_file = |name: &str, r: Result<()>| r.map_err(|e| e.in_file(sd.join(name)));

        let mut w = create(&sd.join("gt.txt"))?;
        in_file("gt.txt", write_ground_truth(&mut w, &s.gt).and_then(|_| Ok(w.flush()?)))?;

        let dets: Vec<&Detection> = s.frames.iter().flat_map(|(_, d)| d).collect();
        let records: Vec<DetRecord> =
            dets.iter().map(|d| DetRecord { frame: d.frame, bbox: d.bbox, confidence: d.confidence }).collect();
        let mut w = create(&sd.join("det.txt"))?;
        in_file("det.txt", write_detections(&mut w, &records).and_then(|_| Ok(w.flush()?)))?;

        let dim = dets.first().map_or(0, |d| d.embedding.dim());
        let pairs: Vec<_> = dets.iter().map(|d| (&d.embedding, &d.attr_obs)).collect();
        let mut w = create(&sd.join("features.bin"))?;
        in_file("features.bin", write_features(&mut w, dim, &pairs).and_then(|_| Ok(w.flush()?)))?;

        let mut w = create(&sd.join("attrs.txt"))?;
        in_file("attrs.txt", write_attributes(&mut w, &s.attributes).and_then(|_| Ok(w.flush()?)))?;

        let mut w = create(&sd.join("meta.jsonl"))?;
        for f in 1..=s.n_frames {
            let meta = FrameMeta { frame: f, occlusion: s.occlusion.get(&f).cloned().unwrap_or_default() };
            let line = serde_json::to_string(&meta).expect("meta serializes");
            writeln!(w, "{line}")?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Validates, simulates and writes a benchmark; nothing is written when the
/// configuration is invalid.
pub fn generate_benchmark(config: &BenchmarkConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let seqs = simulate_benchmark(config)?;
    write_benchmark(config, &seqs, dir)?;
    Ok(seqs.iter().map(|s| dir.join(&s.name)).collect())
}

fn load_sequence(dir: &Path) -> Result<SequenceData> {
    let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
    let gt_path = dir.join("gt.txt");
    let gt = read_ground_truth(open(&gt_path)?).map_err(|e| e.in_file(&gt_path))?;

    let det_path = dir.join("det.txt");
    let records = read_detections(open(&det_path)?).map_err(|e| e.in_file(&det_path))?;
    let feat_path = dir.join("features.bin");
    let (_, feats) = read_features(open(&feat_path)?).map_err(|e| e.in_file(&feat_path))?;
    if feats.len() != records.len() {
        return Err(Error::File {
            path: feat_path,
            msg: format!("{} feature records for {} detections", feats.len(), records.len()),
        });
    }

    let attr_path = dir.join("attrs.txt");
    let attributes = if attr_path.exists() {
        read_attributes(open(&attr_path)?).map_err(|e| e.in_file(&attr_path))?
    } else {
        BTreeMap::new()
    };

    let meta_path = dir.join("meta.jsonl");
    let mut occlusion = BTreeMap::new();
    let mut n_frames = 0;
    if meta_path.exists() {
        for (i, line) in open(&meta_path)?.lines().enumerate() {
            let line = line?;
            let meta: FrameMeta = serde_json::from_str(&line)
                .map_err(|e| Error::parse(i + 1, e.to_string()).in_file(&meta_path))?;
            n_frames = n_frames.max(meta.frame);
            if !meta.occlusion.is_empty() {
                occlusion.insert(meta.frame, meta.occlusion);
            }
        }
    }
    let last = records.iter().map(|r| r.frame).chain(gt.iter().map(|g| g.frame)).max().unwrap_or(0);
    n_frames = n_frames.max(last);

    let mut frames: Vec<(u32, Vec<Detection>)> = (1..=n_frames).map(|f| (f, Vec::new())).collect();
    for (r, (embedding, attr_obs)) in records.into_iter().zip(feats) {
        if r.frame == 0 {
            return Err(Error::File { path: det_path, msg: "frame numbers start at 1".into() });
        }
        frames[r.frame as usize - 1].1.push(Detection {
            frame: r.frame,
            bbox: r.bbox,
            confidence: r.confidence,
            embedding,
            attr_obs,
        });
    }
    Ok(SequenceData { name, n_frames, gt, attributes, frames, occlusion })
}

/// Loads every sequence directory (one holding a `gt.txt`) in name order.
pub fn load_benchmark(dir: &Path) -> Result<Vec<SequenceData>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("gt.txt").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::File { path: dir.to_path_buf(), msg: "no sequences found".into() });
    }
    dirs.iter().map(|d| load_sequence(d)).collect()
}
