//! Tab-separated utterance manifests and the speaker-disjoint corpus split.
//!
//! A manifest row is `id \t clean_path \t noise_path \t snr_db \t noisy_path`.
//! Tabs rather than commas because paths may contain commas. Generation is a
//! pure function of the lexicographically sorted directory listings and the
//! seed, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mvnet_core::rng;

use crate::fail::{input, Fail};

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub id: String,
    pub clean: PathBuf,
    pub noise: PathBuf,
    pub snr_db: f64,
    pub noisy: PathBuf,
}

pub fn write(path: &Path, rows: &[Row]) -> Result<(), Fail> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{}\n",
            r.id,
            r.clean.display(),
            r.noise.display(),
            r.snr_db,
            r.noisy.display()
        ));
    }
    crate::wav::atomic_write(path, text.as_bytes())
}

pub fn read(path: &Path) -> Result<Vec<Row>, Fail> {
    let text = fs::read_to_string(path)
        .map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(input(format!(
                "{}:{}: expected 5 tab-separated fields, got {}",
                path.display(),
                ln + 1,
                f.len()
            )));
        }
        let snr_db: f64 = f[3].parse().map_err(|_| {
            input(format!("{}:{}: bad snr value {:?}", path.display(), ln + 1, f[3]))
        })?;
        rows.push(Row {
            id: f[0].to_string(),
            clean: PathBuf::from(f[1]),
            noise: PathBuf::from(f[2]),
            snr_db,
            noisy: PathBuf::from(f[4]),
        });
    }
    if rows.is_empty() {
        return Err(input(format!("{}: empty manifest", path.display())));
    }
    let mut seen = std::collections::BTreeSet::new();
    for r in &rows {
        if !seen.insert(r.id.clone()) {
            return Err(input(format!("{}: duplicate utterance id {}", path.display(), r.id)));
        }
    }
    Ok(rows)
}

/// Sorted `.wav` listing of a directory.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>, Fail> {
    let rd = fs::read_dir(dir)
        .map_err(|e| input(format!("cannot list {}: {e}", dir.display())))?;
    let mut out: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(input(format!("{}: no .wav files", dir.display())));
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Speaker id convention: the leading token before '-' in the file stem.
fn speaker_of(p: &Path) -> Option<String> {
    let s = stem(p);
    let (head, _) = s.split_once('-')?;
    if head.is_empty() {
        None
    } else {
        Some(head.to_string())
    }
}

pub struct Splits {
    pub train: Vec<PathBuf>,
    pub valid: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
    /// True when filenames carried speaker ids and the split is by speaker.
    pub by_speaker: bool,
}

/// Partitions clean files 0.6/0.2/0.2. When every stem encodes a speaker id
/// the split is by whole speakers so no voice leaks across subsets;
/// otherwise it falls back to a seeded per-file shuffle (caller warns).
pub fn build_splits(clean: &[PathBuf], seed: u64) -> Splits {
    let ids: Vec<Option<String>> = clean.iter().map(|p| speaker_of(p)).collect();
    if ids.iter().all(|i| i.is_some()) {
        let mut by: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
        for (p, id) in clean.iter().zip(&ids) {
            by.entry(id.clone().unwrap()).or_default().push(p.clone());
        }
        let speakers: Vec<String> = by.keys().cloned().collect();
        if speakers.len() >= 3 {
            let order = shuffled_indices(speakers.len(), seed, 20);
            let n = speakers.len();
            let n_train = ((n as f64 * 0.6).round() as usize).clamp(1, n - 2);
            let n_valid = ((n as f64 * 0.2).round() as usize).clamp(1, n - n_train - 1);
            let bucket = |range: &[usize]| -> Vec<PathBuf> {
                let mut v: Vec<PathBuf> = range
                    .iter()
                    .flat_map(|&i| by[&speakers[i]].iter().cloned())
                    .collect();
                v.sort();
                v
            };
            return Splits {
                train: bucket(&order[..n_train]),
                valid: bucket(&order[n_train..n_train + n_valid]),
                test: bucket(&order[n_train + n_valid..]),
                by_speaker: true,
            };
        }
    }
    // Per-file fallback.
    let order = shuffled_indices(clean.len(), seed, 21);
    let n = clean.len();
    let n_train = ((n as f64 * 0.6).round() as usize).clamp(1, n.saturating_sub(2).max(1));
    let n_valid = if n > n_train { ((n as f64 * 0.2).round() as usize).clamp(1, n - n_train) } else { 0 };
    let pick = |r: &[usize]| -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = r.iter().map(|&i| clean[i].clone()).collect();
        v.sort();
        v
    };
    let end_valid = (n_train + n_valid).min(n);
    Splits {
        train: pick(&order[..n_train.min(n)]),
        valid: pick(&order[n_train.min(n)..end_valid]),
        test: pick(&order[end_valid..]),
        by_speaker: false,
    }
}

fn shuffled_indices(n: usize, seed: u64, tag: u64) -> Vec<usize> {
    rng::shuffled_indices(n, &mut rng::stream(seed, &[tag]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paths(names: &[&str]) -> Vec<PathBuf> {
        names.iter().map(PathBuf::from).collect()
    }

    #[test]
    fn round_trip_preserves_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        let rows = vec![
            Row {
                id: "a-1".into(),
                clean: "c/a-1.wav".into(),
                noise: "n/x.wav".into(),
                snr_db: -3.25,
                noisy: "o/a-1.wav".into(),
            },
            Row {
                id: "b-1".into(),
                clean: "c/b-1.wav".into(),
                noise: "n/y.wav".into(),
                snr_db: 4.0,
                noisy: "o/b-1.wav".into(),
            },
        ];
        write(&p, &rows).unwrap();
        assert_eq!(read(&p).unwrap(), rows);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        std::fs::write(&p, "a\tc\tn\t0.0\to\na\tc\tn\t1.0\to\n").unwrap();
        assert!(read(&p).is_err());
    }

    #[test]
    fn speaker_split_is_disjoint() {
        let clean = paths(&[
            "s1-a.wav", "s1-b.wav", "s2-a.wav", "s2-b.wav", "s3-a.wav",
            "s3-b.wav", "s4-a.wav", "s4-b.wav", "s5-a.wav", "s5-b.wav",
        ]);
        let s = build_splits(&clean, 7);
        assert!(s.by_speaker);
        let spk = |v: &[PathBuf]| -> std::collections::BTreeSet<String> {
            v.iter().map(|p| speaker_of(p).unwrap()).collect()
        };
        let (a, b, c) = (spk(&s.train), spk(&s.valid), spk(&s.test));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        assert_eq!(s.train.len() + s.valid.len() + s.test.len(), clean.len());
        assert!(!s.train.is_empty() && !s.valid.is_empty() && !s.test.is_empty());
    }

    #[test]
    fn unparseable_names_fall_back_to_per_file() {
        let clean = paths(&["alpha.wav", "beta.wav", "gamma.wav", "delta.wav", "eps.wav"]);
        let s = build_splits(&clean, 7);
        assert!(!s.by_speaker);
        assert_eq!(s.train.len() + s.valid.len() + s.test.len(), clean.len());
    }

    #[test]
    fn splits_are_seed_stable() {
        let clean = paths(&[
            "s1-a.wav", "s2-a.wav", "s3-a.wav", "s4-a.wav", "s5-a.wav",
        ]);
        let one = build_splits(&clean, 42);
        let two = build_splits(&clean, 42);
        assert_eq!(one.train, two.train);
        assert_eq!(one.valid, two.valid);
        assert_eq!(one.test, two.test);
    }
}
