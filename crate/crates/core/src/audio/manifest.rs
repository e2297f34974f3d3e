//! Dataset manifests: line-oriented text listing (source, label, split)
//! rows under a commented header. Sources are either generator specs, which
//! regenerate deterministically, or external WAV paths so licensed corpora
//! can be dropped in unchanged.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::synth::{example_seed, synth_waveform, SynthConfig, Task};
use super::wav::load_wav;
use super::waveform::{preprocess, Waveform};
use super::AudioError;

pub const HOLDOUT_FRACTIONS: [f64; 3] = [0.75, 0.05, 0.20];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Result<Split, AudioError> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(AudioError::ManifestParse {
                detail: format!("unknown split '{other}'"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    /// Regenerated from the generator: `(class, example seed)`.
    Synth { class: usize, ex_seed: u64 },
    /// WAV file path, relative to the manifest location.
    Wav(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub source: Source,
    pub label: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn ids(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn of(&self, idx: usize) -> Option<Split> {
        if self.train.contains(&idx) {
            Some(Split::Train)
        } else if self.val.contains(&idx) {
            Some(Split::Val)
        } else if self.test.contains(&idx) {
            Some(Split::Test)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub task: Task,
    pub seed: u64,
    pub synth: SynthConfig,
    pub labels: Vec<String>,
    pub entries: Vec<Entry>,
    pub splits: Splits,
}

/// Manifest plus materialized waveforms, index-aligned with `entries`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub waves: Vec<Waveform>,
}

impl Dataset {
    pub fn examples(&self, split: Split) -> Vec<(&Waveform, usize)> {
        self.manifest
            .splits
            .ids(split)
            .iter()
            .map(|&i| (&self.waves[i], self.manifest.entries[i].label))
            .collect()
    }
}

/// Build a class-balanced synthetic dataset with the standard hold-out
/// split already applied. Deterministic for a fixed seed.
pub fn synth_dataset(
    task: Task,
    n_per_class: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<Dataset, AudioError> {
    if n_per_class == 0 {
        return Err(AudioError::ManifestParse {
            detail: "n_per_class must be at least 1".into(),
        });
    }
    let k = task.num_classes();
    let mut entries = Vec::with_capacity(k * n_per_class);
    let mut waves = Vec::with_capacity(k * n_per_class);
    for class in 0..k {
        for i in 0..n_per_class {
            let ex_seed = example_seed(seed, class, i);
            waves.push(synth_waveform(task, class, ex_seed, cfg)?);
            entries.push(Entry {
                source: Source::Synth { class, ex_seed },
                label: class,
            });
        }
    }
    let mut manifest = DatasetManifest {
        task,
        seed,
        synth: *cfg,
        labels: task.labels(),
        entries,
        splits: Splits::default(),
    };
    split(&mut manifest, HOLDOUT_FRACTIONS, seed)?;
    Ok(Dataset { manifest, waves })
}

/// Assign stratified train/val/test splits: per class, proportions land
/// within one example of the requested fractions; splits are disjoint,
/// exhaustive, and deterministic for a fixed seed.
pub fn split(
    manifest: &mut DatasetManifest,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(), AudioError> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| f < 0.0) {
        return Err(AudioError::ManifestParse {
            detail: format!("split fractions {fractions:?} must be non-negative and sum to 1"),
        });
    }
    let k = manifest.labels.len();
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, e) in manifest.entries.iter().enumerate() {
        per_class[e.label].push(i);
    }
    for (c, ids) in per_class.iter().enumerate() {
        if ids.len() < 3 {
            return Err(AudioError::ClassTooSmall {
                label: manifest.labels[c].clone(),
                count: ids.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = Splits::default();
    for ids in &mut per_class {
        ids.shuffle(&mut rng);
        let counts = largest_remainder(ids.len(), fractions);
        let (a, b) = (counts[0], counts[0] + counts[1]);
        splits.train.extend_from_slice(&ids[..a]);
        splits.val.extend_from_slice(&ids[a..b]);
        splits.test.extend_from_slice(&ids[b..]);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    manifest.splits = splits;
    Ok(())
}

/// Apportion `n` items to three buckets by the largest-remainder rule.
fn largest_remainder(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let targets: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..(n - assigned) {
        counts[order[i % 3]] += 1;
    }
    [counts[0], counts[1], counts[2]]
}

// ---------------------------------------------------------------------------
// Text serialization
// ---------------------------------------------------------------------------

pub fn manifest_to_string(m: &DatasetManifest) -> String {
    let mut out = String::new();
    out.push_str("# waveadv-manifest v1\n");
    out.push_str(&format!("# task: {}\n", m.task.name()));
    out.push_str(&format!("# seed: {}\n", m.seed));
    out.push_str(&format!("# sample_rate: {}\n", m.synth.sample_rate));
    out.push_str(&format!("# clip_seconds: {}\n", m.synth.clip_seconds));
    out.push_str(&format!("# noise_snr_db: {}\n", m.synth.noise_snr_db));
    out.push_str(&format!("# labels: {}\n", m.labels.join(",")));
    out.push_str("# columns: source<TAB>label<TAB>split\n");
    for (i, e) in m.entries.iter().enumerate() {
        let source = match &e.source {
            Source::Synth { class, ex_seed } => format!("synth:{class}:{ex_seed:016x}"),
            Source::Wav(p) => format!("wav:{}", p.display()),
        };
        let split = m.splits.of(i).map(|s| s.name()).unwrap_or("train");
        out.push_str(&format!("{source}\t{}\t{split}\n", m.labels[e.label]));
    }
    out
}

pub fn save_manifest(m: &DatasetManifest, path: &Path) -> Result<(), AudioError> {
    fs::write(path, manifest_to_string(m)).map_err(|e| AudioError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest, AudioError> {
    let err = |detail: String| AudioError::ManifestParse { detail };
    let mut header = std::collections::BTreeMap::new();
    let mut rows = Vec::new();
    for line in text.lines() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.trim().split_once(':') {
                header.insert(key.trim().to_string(), value.trim().to_string());
            }
            continue;
        }
        rows.push(line.to_string());
    }
    let get = |key: &str| {
        header
            .get(key)
            .cloned()
            .ok_or_else(|| err(format!("missing header field '{key}'")))
    };
    let task = Task::parse(&get("task")?)?;
    let seed = get("seed")?
        .parse::<u64>()
        .map_err(|e| err(format!("bad seed: {e}")))?;
    let synth = SynthConfig {
        sample_rate: get("sample_rate")?
            .parse()
            .map_err(|e| err(format!("bad sample_rate: {e}")))?,
        clip_seconds: get("clip_seconds")?
            .parse()
            .map_err(|e| err(format!("bad clip_seconds: {e}")))?,
        noise_snr_db: get("noise_snr_db")?
            .parse()
            .map_err(|e| err(format!("bad noise_snr_db: {e}")))?,
    };
    let labels: Vec<String> = get("labels")?.split(',').map(|s| s.trim().to_string()).collect();
    let mut entries = Vec::new();
    let mut splits = Splits::default();
    for (i, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!(
                "row {i}: expected source<TAB>label<TAB>split, got '{row}'"
            )));
        }
        let source = parse_source(fields[0]).map_err(|detail| err(format!("row {i}: {detail}")))?;
        let label = labels
            .iter()
            .position(|l| l == fields[1])
            .ok_or_else(|| err(format!("row {i}: unknown label '{}'", fields[1])))?;
        match Split::parse(fields[2])? {
            Split::Train => splits.train.push(i),
            Split::Val => splits.val.push(i),
            Split::Test => splits.test.push(i),
        }
        entries.push(Entry { source, label });
    }
    Ok(DatasetManifest {
        task,
        seed,
        synth,
        labels,
        entries,
        splits,
    })
}

fn parse_source(s: &str) -> Result<Source, String> {
    if let Some(rest) = s.strip_prefix("synth:") {
        let (class, ex_seed) = rest
            .split_once(':')
            .ok_or_else(|| format!("bad synth source '{s}'"))?;
        Ok(Source::Synth {
            class: class.parse().map_err(|e| format!("bad class: {e}"))?,
            ex_seed: u64::from_str_radix(ex_seed, 16).map_err(|e| format!("bad seed: {e}"))?,
        })
    } else if let Some(path) = s.strip_prefix("wav:") {
        Ok(Source::Wav(PathBuf::from(path)))
    } else {
        Err(format!("unknown source scheme in '{s}'"))
    }
}

/// Read a manifest and materialize every waveform: generator entries are
/// regenerated, WAV entries are loaded relative to the manifest and run
/// through the preprocessing protocol.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, AudioError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| AudioError::Io {
        path: manifest_path.display().to_string(),
        source: e,
    })?;
    let manifest = parse_manifest(&text)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let waves = manifest
        .entries
        .iter()
        .map(|e| match &e.source {
            Source::Synth { class, ex_seed } => {
                synth_waveform(manifest.task, *class, *ex_seed, &manifest.synth)
            }
            Source::Wav(p) => {
                let w = load_wav(&base.join(p))?;
                preprocess(&w, manifest.synth.clip_seconds, manifest.synth.sample_rate)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset { manifest, waves })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_dataset_is_balanced_and_deterministic() {
        let cfg = SynthConfig::default();
        let a = synth_dataset(Task::GenderProxy, 10, 7, &cfg).unwrap();
        let b = synth_dataset(Task::GenderProxy, 10, 7, &cfg).unwrap();
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.waves.len(), 20);
        for (wa, wb) in a.waves.iter().zip(&b.waves) {
            assert_eq!(wa.samples, wb.samples);
        }
        let low = a.manifest.entries.iter().filter(|e| e.label == 0).count();
        assert_eq!(low, 10);
    }

    #[test]
    fn holdout_split_is_75_5_20() {
        let cfg = SynthConfig::default();
        let d = synth_dataset(Task::GenderProxy, 100, 7, &cfg).unwrap();
        assert_eq!(d.manifest.splits.train.len(), 150);
        assert_eq!(d.manifest.splits.val.len(), 10);
        assert_eq!(d.manifest.splits.test.len(), 40);
    }

    #[test]
    fn split_is_stratified_within_one_example() {
        let cfg = SynthConfig::default();
        let d = synth_dataset(Task::SpeakerProxy, 13, 3, &cfg).unwrap();
        let m = &d.manifest;
        for class in 0..4 {
            let count = |ids: &[usize]| {
                ids.iter()
                    .filter(|&&i| m.entries[i].label == class)
                    .count() as f64
            };
            for (ids, frac) in [
                (&m.splits.train, 0.75),
                (&m.splits.val, 0.05),
                (&m.splits.test, 0.20),
            ] {
                let got = count(ids);
                assert!(
                    (got - frac * 13.0).abs() <= 1.0,
                    "class {class}: {got} vs target {}",
                    frac * 13.0
                );
            }
        }
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        let cfg = SynthConfig::default();
        let d = synth_dataset(Task::EmotionProxy, 17, 11, &cfg).unwrap();
        let s = &d.manifest.splits;
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        let expected: Vec<usize> = (0..34).collect();
        assert_eq!(all, expected);
    }

    #[test]
    fn same_seed_gives_same_split() {
        let cfg = SynthConfig::default();
        let mut a = synth_dataset(Task::GenderProxy, 20, 5, &cfg).unwrap().manifest;
        let saved = a.splits.clone();
        split(&mut a, HOLDOUT_FRACTIONS, 5).unwrap();
        assert_eq!(a.splits, saved);
    }

    #[test]
    fn tiny_class_is_rejected() {
        let cfg = SynthConfig::default();
        let mut m = synth_dataset(Task::GenderProxy, 3, 1, &cfg).unwrap().manifest;
        m.entries.truncate(4); // class 1 left with a single example
        assert!(matches!(
            split(&mut m, HOLDOUT_FRACTIONS, 1),
            Err(AudioError::ClassTooSmall { .. })
        ));
    }

    #[test]
    fn manifest_text_roundtrip() {
        let cfg = SynthConfig::default();
        let d = synth_dataset(Task::SpeakerProxy, 5, 9, &cfg).unwrap();
        let text = manifest_to_string(&d.manifest);
        let back = parse_manifest(&text).unwrap();
        assert_eq!(back, d.manifest);
    }

    #[test]
    fn bad_fractions_are_rejected() {
        let cfg = SynthConfig::default();
        let mut m = synth_dataset(Task::GenderProxy, 5, 1, &cfg).unwrap().manifest;
        assert!(split(&mut m, [0.5, 0.5, 0.5], 1).is_err());
    }
}
