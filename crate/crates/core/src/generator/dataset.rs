//! One-second labelled clip datasets built with the SEC, FPC and WC recipes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{chunk_clip, fit_to_one_second, load_clip, MelFrontend, MelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::par;

/// Which recipe produced a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TaskTag {
    Sec,
    Fpc,
    Wc,
    Custom(String),
}

impl fmt::Display for TaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskTag::Sec => f.write_str("SEC"),
            TaskTag::Fpc => f.write_str("FPC"),
            TaskTag::Wc => f.write_str("WC"),
            TaskTag::Custom(s) => f.write_str(s),
        }
    }
}

impl FromStr for TaskTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "sec" => TaskTag::Sec,
            "fpc" => TaskTag::Fpc,
            "wc" => TaskTag::Wc,
            "" => return Err(Error::invalid("empty task tag")),
            _ => TaskTag::Custom(s.to_string()),
        })
    }
}

impl Serialize for TaskTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TaskTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug)]
pub struct LabeledClipDataset {
    pub items: Vec<(MelSpectrogram, usize)>,
    pub class_names: Vec<String>,
    pub task: TaskTag,
}

impl LabeledClipDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes()];
        for &(_, y) in &self.items {
            if y < c.len() {
                c[y] += 1;
            }
        }
        c
    }

    /// Every label in range and every class with at least two items.
    pub fn validate(&self) -> Result<()> {
        if let Some((_, y)) = self.items.iter().find(|(_, y)| *y >= self.n_classes()) {
            return Err(Error::invalid(format!(
                "label {y} out of range for {} classes",
                self.n_classes()
            )));
        }
        for (name, count) in self.class_names.iter().zip(self.class_counts()) {
            if count < 2 {
                return Err(Error::Empty(format!(
                    "class {name:?} has {count} item(s); at least 2 are needed"
                )));
            }
        }
        Ok(())
    }

    /// Builds from labelled one-second waveforms, computing spectrograms in parallel.
    pub fn from_waveforms(
        clips: Vec<(Waveform, usize)>,
        class_names: Vec<String>,
        task: TaskTag,
    ) -> Result<Self> {
        let front = MelFrontend::shared();
        let items = par::try_map(&clips, |(w, y)| Ok::<_, Error>((front.mel_spectrogram(w)?, *y)))?;
        Ok(Self {
            items,
            class_names,
            task,
        })
    }
}

/// Distinct labels in sorted order, and each input's class index.
fn index_labels<'a>(labels: impl Iterator<Item = &'a str>) -> (Vec<String>, BTreeMap<String, usize>) {
    let names: Vec<String> = labels
        .map(str::to_string)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    (names, index)
}

/// Sound-event recipe: each clip is cut into consecutive one-second chunks
/// that inherit the clip's label.
pub fn build_sec_dataset(clips: &[(Waveform, String)]) -> Result<LabeledClipDataset> {
    let (names, index) = index_labels(clips.iter().map(|(_, l)| l.as_str()));
    let mut chunks = Vec::new();
    for (w, label) in clips {
        for c in chunk_clip(w, 1.0)? {
            chunks.push((c, index[label]));
        }
    }
    let ds = LabeledClipDataset::from_waveforms(chunks, names, TaskTag::Sec)?;
    if let Some((name, _)) = ds
        .class_names
        .iter()
        .zip(ds.class_counts())
        .find(|(_, c)| *c == 0)
    {
        return Err(Error::Empty(format!("class {name:?} is empty after chunking")));
    }
    Ok(ds)
}

pub const FPC_CLASSES: [&str; 4] = ["begin", "middle", "end", "jingle"];
const FPC_TRIM_S: usize = 3;
const FPC_PART_S: usize = 4;
pub const FPC_MIN_FRAGMENT_S: usize = 120;

/// Start samples of the three 4 s parts of one fragment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FpcWindows {
    pub begin: usize,
    pub middle: usize,
    pub end: usize,
}

/// Trims 3 s at each end, takes the first and last 4 s of what remains, and
/// draws the middle window uniformly from the audio strictly between them.
pub fn fpc_windows<R: Rng>(len: usize, rate: u32, rng: &mut R) -> Result<FpcWindows> {
    let sec = rate as usize;
    if len < FPC_MIN_FRAGMENT_S * sec {
        return Err(Error::invalid(format!(
            "fragment of {:.1} s is shorter than {FPC_MIN_FRAGMENT_S} s",
            len as f64 / sec as f64
        )));
    }
    let begin = FPC_TRIM_S * sec;
    let end = len - (FPC_TRIM_S + FPC_PART_S) * sec;
    let lo = begin + FPC_PART_S * sec;
    let hi = end - FPC_PART_S * sec;
    Ok(FpcWindows {
        begin,
        middle: rng.random_range(lo..=hi),
        end,
    })
}

/// Fragment-part recipe with classes begin / middle / end / jingle. Every 4 s
/// part and every jingle is cut into one-second items.
pub fn build_fpc_dataset(fragments: &[Waveform], jingles: &[Waveform], seed: u64) -> Result<LabeledClipDataset> {
    if jingles.is_empty() {
        return Err(Error::Empty("fragment-part dataset needs jingle clips".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clips = Vec::new();
    for f in fragments {
        let win = fpc_windows(f.len(), f.sample_rate, &mut rng)?;
        let part = FPC_PART_S * f.sample_rate as usize;
        for (class, start) in [win.begin, win.middle, win.end].into_iter().enumerate() {
            for c in chunk_clip(&f.segment(start, part), 1.0)? {
                clips.push((c, class));
            }
        }
    }
    for j in jingles {
        for c in chunk_clip(j, 1.0)? {
            clips.push((c, 3));
        }
    }
    let names = FPC_CLASSES.iter().map(|s| s.to_string()).collect();
    LabeledClipDataset::from_waveforms(clips, names, TaskTag::Fpc)
}

/// Word-classification recipe: clips are padded or cut to one second and each
/// distinct word is a class.
pub fn build_wc_dataset(word_clips: &[(Waveform, String)], min_samples: usize) -> Result<LabeledClipDataset> {
    let (names, index) = index_labels(word_clips.iter().map(|(_, l)| l.as_str()));
    let mut counts = vec![0usize; names.len()];
    word_clips.iter().for_each(|(_, w)| counts[index[w]] += 1);
    if let Some((name, &c)) = names.iter().zip(&counts).find(|(_, &c)| c < min_samples) {
        return Err(Error::Empty(format!(
            "word {name:?} has {c} sample(s), fewer than {min_samples}"
        )));
    }
    let clips = word_clips
        .iter()
        .map(|(w, word)| (fit_to_one_second(w), index[word]))
        .collect();
    LabeledClipDataset::from_waveforms(clips, names, TaskTag::Wc)
}

/// On-disk list of labelled audio files for one recipe. Paths are relative to
/// the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipManifest {
    pub task: TaskTag,
    pub clips: Vec<ClipEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipEntry {
    pub path: PathBuf,
    pub label: String,
}

impl ClipManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads every clip and applies the task's recipe. For FPC, clips labelled
    /// `jingle` are jingles and everything else is a fragment.
    pub fn build(&self, base: &Path, seed: u64, wc_min_samples: usize) -> Result<LabeledClipDataset> {
        let loaded = par::try_map(&self.clips, |c| {
            Ok::<_, Error>((load_clip(&base.join(&c.path))?, c.label.clone()))
        })?;
        match &self.task {
            TaskTag::Fpc => {
                let (jingles, fragments): (Vec<_>, Vec<_>) =
                    loaded.into_iter().partition(|(_, l)| l == "jingle");
                let f: Vec<Waveform> = fragments.into_iter().map(|(w, _)| w).collect();
                let j: Vec<Waveform> = jingles.into_iter().map(|(w, _)| w).collect();
                build_fpc_dataset(&f, &j, seed)
            }
            TaskTag::Wc => build_wc_dataset(&loaded, wc_min_samples),
            TaskTag::Sec => build_sec_dataset(&loaded),
            TaskTag::Custom(name) => {
                let mut ds = build_sec_dataset(&loaded)?;
                ds.task = TaskTag::Custom(name.clone());
                Ok(ds)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::TARGET_RATE;

    fn tone(freq: f64, seconds: f64) -> Waveform {
        let n = (seconds * TARGET_RATE as f64) as usize;
        Waveform::new(
            (0..n)
                .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / TARGET_RATE as f64).sin()) as f32)
                .collect(),
            TARGET_RATE,
        )
    }

    #[test]
    fn sec_counts() {
        let one = build_sec_dataset(&[(tone(300.0, 1.0), "a".into())]).unwrap();
        assert_eq!(one.len(), 1);

        let clips: Vec<(Waveform, String)> = (0..5)
            .flat_map(|c| (0..10).map(move |_| (tone(200.0 * (c + 1) as f64, 3.0), format!("c{c}"))))
            .collect();
        let ds = build_sec_dataset(&clips).unwrap();
        assert_eq!(ds.len(), 150);
        assert_eq!(ds.class_counts(), vec![30; 5]);
        ds.validate().unwrap();
    }

    #[test]
    fn sec_short_clip_fails() {
        assert!(build_sec_dataset(&[(tone(300.0, 0.5), "a".into())]).is_err());
    }

    #[test]
    fn fpc_recipe_arithmetic() {
        let frag = Waveform::silence(120 * TARGET_RATE as usize, TARGET_RATE);
        let jingle = tone(1000.0, 2.0);
        let ds = build_fpc_dataset(&[frag.clone(), frag], &[jingle], 1).unwrap();
        // 12 items per fragment plus 2 jingle seconds
        assert_eq!(ds.len(), 26);
        assert_eq!(ds.class_counts(), vec![8, 8, 8, 2]);
        assert_eq!(ds.task, TaskTag::Fpc);
    }

    #[test]
    fn fpc_windows_are_seeded_and_inside() {
        let rate = 1000;
        let len = 150 * rate as usize;
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| fpc_windows(len, rate, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        for w in draw(9) {
            assert_eq!(w.begin, 3000);
            assert_eq!(w.end, len - 7000);
            assert!(w.middle >= 7000 && w.middle + 4000 <= w.end);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(fpc_windows(119 * rate as usize, rate, &mut rng).is_err());
    }

    #[test]
    fn fpc_needs_jingles() {
        let frag = Waveform::silence(120 * TARGET_RATE as usize, TARGET_RATE);
        assert!(build_fpc_dataset(&[frag], &[], 0).is_err());
    }

    #[test]
    fn wc_recipe() {
        let w = tone(440.0, 0.4);
        let ds = build_wc_dataset(&[(w.clone(), "hello".into()), (w.clone(), "hello".into())], 2).unwrap();
        assert_eq!((ds.len(), ds.n_classes()), (2, 1));
        assert!(build_wc_dataset(&[(w.clone(), "hello".into()), (w, "bye".into())], 2).is_err());
    }

    #[test]
    fn validate_rejects_singletons() {
        let spec = MelFrontend::shared().mel_spectrogram(&tone(300.0, 1.0)).unwrap();
        let ds = LabeledClipDataset {
            items: vec![(spec.clone(), 0), (spec.clone(), 0), (spec, 1)],
            class_names: vec!["a".into(), "b".into()],
            task: TaskTag::Sec,
        };
        assert!(matches!(ds.validate(), Err(Error::Empty(_))));
    }

    #[test]
    fn task_tag_text() {
        for (s, t) in [("sec", TaskTag::Sec), ("FPC", TaskTag::Fpc), ("wc", TaskTag::Wc)] {
            assert_eq!(s.parse::<TaskTag>().unwrap(), t);
        }
        assert_eq!("birds".parse::<TaskTag>().unwrap(), TaskTag::Custom("birds".into()));
        let json = serde_json::to_string(&TaskTag::Sec).unwrap();
        assert_eq!(json, "\"SEC\"");
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        crate::dsp::write_wav_pcm16(&dir.path().join("a.wav"), &tone(300.0, 2.0)).unwrap();
        crate::dsp::write_wav_pcm16(&dir.path().join("b.wav"), &tone(3000.0, 2.0)).unwrap();
        let m = ClipManifest {
            task: TaskTag::Sec,
            clips: vec![
                ClipEntry { path: "a.wav".into(), label: "low".into() },
                ClipEntry { path: "b.wav".into(), label: "high".into() },
            ],
        };
        let path = dir.path().join("clips.json");
        m.write(&path).unwrap();
        let back = ClipManifest::read(&path).unwrap();
        assert_eq!(back, m);
        let ds = back.build(dir.path(), 0, 2).unwrap();
        assert_eq!(ds.class_names, vec!["high", "low"]);
        assert_eq!(ds.len(), 4);
    }
}
