//! Corpus manifests, the synthetic corpus generator, and loading clips into
//! model-ready patch grids.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{synth_scores, write_scores, ScoreFile, SynthScoreConfig, Vocabulary};
use crate::model::ModelConfig;
use crate::nn::Tensor;
use crate::tokenizer::{hz_to_mel, log_mel, mel_to_hz, normalize_patches, AudioFeature, FrameImage, MelConfig, PatchGrid, Patchify};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (expected train|val|test)"))),
        }
    }
}

/// Audio stored as raw little-endian `f32` files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AudioSource {
    /// Mono waveform.
    Waveform { path: PathBuf, sample_rate: u32 },
    /// Precomputed log-mel matrix, `frames × bins`, row-major.
    Spectrogram { path: PathBuf, frames: usize, bins: usize },
}

/// `height × width × 3` raw little-endian `f32` intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSource {
    pub path: PathBuf,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub clip: String,
    pub audio: AudioSource,
    pub frame: FrameSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi_label: Option<Vec<usize>>,
    pub split: Split,
}

/// JSON-lines clip list. Relative paths resolve against `root`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub entries: Vec<ClipEntry>,
}

impl CorpusManifest {
    pub fn new(root: PathBuf, entries: Vec<ClipEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.clip.as_str()) {
                return Err(Error::contract(format!("duplicate clip id {:?} in manifest", e.clip)));
            }
        }
        Ok(CorpusManifest { root, entries })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn parse(text: &str, root: PathBuf, origin: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(line).map_err(|e| Error::Parse { path: origin.into(), line: i + 1, msg: e.to_string() })?;
            entries.push(e);
        }
        Self::new(root, entries)
    }

    /// Reads a manifest and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&text, root, &path.display().to_string())?;
        for e in &m.entries {
            let audio = match &e.audio {
                AudioSource::Waveform { path, .. } | AudioSource::Spectrogram { path, .. } => path,
            };
            for p in [audio, &e.frame.path] {
                let full = m.resolve(p);
                if !full.is_file() {
                    return Err(Error::input(format!("clip {}: missing file {}", e.clip, full.display())));
                }
            }
        }
        Ok(m)
    }

    pub fn render(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out += &serde_json::to_string(e)?;
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()?).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> Vec<&ClipEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }
}

pub fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::input(format!("{}: length {} is not a multiple of 4", path.display(), bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
}

pub fn write_f32(path: &Path, data: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Input geometry a dataset was tokenized for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub audio_frames: usize,
    pub mel_bins: usize,
    pub frame_size: usize,
    pub patch_side: usize,
}

impl Geometry {
    pub fn of(cfg: &ModelConfig) -> Self {
        Geometry { audio_frames: cfg.audio_frames, mel_bins: cfg.mel_bins, frame_size: cfg.frame_size, patch_side: cfg.patch_side }
    }
}

/// A tokenized clip with its reconstruction targets.
#[derive(Clone, Debug)]
pub struct ClipData {
    pub clip: String,
    pub split: Split,
    pub class: Option<usize>,
    pub multi_label: Option<Vec<usize>>,
    pub audio: PatchGrid,
    pub visual: PatchGrid,
    pub audio_target: Tensor,
    pub visual_target: Tensor,
}

/// Every clip of a manifest, in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub geometry: Geometry,
    pub clips: Vec<ClipData>,
}

impl Dataset {
    pub fn load(manifest: &CorpusManifest, cfg: &ModelConfig) -> Result<Self> {
        let geometry = Geometry::of(cfg);
        let mel = MelConfig::with_mels(cfg.mel_bins);
        let mut clips = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let feature = match &e.audio {
                AudioSource::Waveform { path, sample_rate } => {
                    if *sample_rate != mel.sample_rate {
                        return Err(Error::input(format!("clip {}: sample rate {sample_rate}, expected {}", e.clip, mel.sample_rate)));
                    }
                    log_mel(&read_f32(&manifest.resolve(path))?, &mel)?
                }
                AudioSource::Spectrogram { path, frames, bins } => {
                    if *bins != cfg.mel_bins {
                        return Err(Error::input(format!("clip {}: {bins} mel bins, model expects {}", e.clip, cfg.mel_bins)));
                    }
                    let raw = read_f32(&manifest.resolve(path))?;
                    let frames = Tensor::new(vec![*frames, *bins], raw.iter().map(|&v| v as f64).collect())?;
                    AudioFeature { frames, config: mel.clone() }
                }
            };
            let audio = feature.fit_frames(cfg.audio_frames)?.standardized().patchify(cfg.patch_side)?;
            let f = &e.frame;
            if f.height != cfg.frame_size || f.width != cfg.frame_size {
                return Err(Error::input(format!("clip {}: {}×{} frame, model expects {}²", e.clip, f.height, f.width, cfg.frame_size)));
            }
            let raw = read_f32(&manifest.resolve(&f.path))?;
            let image = FrameImage::new(f.height, f.width, raw.iter().map(|&v| v as f64).collect())?;
            let visual = image.centered().patchify(cfg.patch_side)?;
            clips.push(ClipData {
                clip: e.clip.clone(),
                split: e.split,
                class: e.class,
                multi_label: e.multi_label.clone(),
                audio_target: normalize_patches(&audio.patches),
                visual_target: normalize_patches(&visual.patches),
                audio,
                visual,
            });
        }
        Ok(Dataset { geometry, clips })
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.clips.len()).filter(|&i| self.clips[i].split == split).collect()
    }

    pub fn check_geometry(&self, cfg: &ModelConfig) -> Result<()> {
        if Geometry::of(cfg) != self.geometry {
            return Err(Error::Config(format!("model geometry {:?} does not match dataset geometry {:?}", Geometry::of(cfg), self.geometry)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub clips: usize,
    pub classes: usize,
    /// Fraction of each class held out as the test split.
    pub test_fraction: f64,
    pub scores: SynthScoreConfig,
    /// Standard deviation of additive waveform noise.
    pub audio_noise: f64,
    /// Standard deviation of additive pixel noise.
    pub frame_noise: f64,
    /// Strength of one unlabeled distractor per modality, drawn independently
    /// for audio and frame (0 disables).
    pub distractor: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            clips: 8,
            classes: 8,
            test_fraction: 0.0,
            scores: SynthScoreConfig::default(),
            audio_noise: 1e-4,
            frame_noise: 0.01,
            distractor: 0.0,
        }
    }
}

/// One generated clip held in memory.
#[derive(Clone, Debug)]
pub struct SynthClip {
    pub clip: String,
    pub class: usize,
    pub objects: Vec<usize>,
    pub split: Split,
    pub waveform: Vec<f32>,
    pub frame: Vec<f32>,
}

/// Latent objects of class `c`: the object of the same index and its
/// successor, so neighbouring classes share one object.
pub fn class_objects(class: usize, classes: usize) -> Vec<usize> {
    if classes == 1 {
        vec![0]
    } else {
        vec![class, (class + 1) % classes]
    }
}

const TONE_LOW_HZ: f64 = 250.0;
const TONE_HIGH_HZ: f64 = 6000.0;
/// Fundamental of the shared background comb; a multiple of the FFT bin width.
const COMB_HZ: f64 = 62.5;
const COMB_AMP: f64 = 0.01;
const TONE_AMP: f64 = 0.3;

/// Two tones per object, mel-spaced so objects occupy disjoint bands.
fn object_tones(object: usize, objects: usize) -> [f64; 2] {
    let (lo, hi) = (hz_to_mel(TONE_LOW_HZ), hz_to_mel(TONE_HIGH_HZ));
    let slot = |k: usize| mel_to_hz(lo + (hi - lo) * k as f64 / (2 * objects - 1).max(1) as f64);
    [slot(object), slot(object + objects)]
}

fn object_color(object: usize) -> [f64; 3] {
    let h = object as f64 * 0.618_033_988_75;
    let c = |off: f64| 0.5 + 0.5 * (2.0 * PI * (h + off)).cos();
    [c(0.0), c(1.0 / 3.0), c(2.0 / 3.0)]
}

/// Generates `cfg.clips` clips; class `i mod classes` for clip `i`.
pub fn synth_clips(cfg: &SynthConfig, seed: u64) -> Result<Vec<SynthClip>> {
    if cfg.clips < 2 {
        return Err(Error::input(format!("a synthetic corpus needs at least 2 clips, got {}", cfg.clips)));
    }
    if cfg.classes == 0 {
        return Err(Error::input("a synthetic corpus needs at least one class"));
    }
    if !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(Error::input(format!("test fraction {} outside [0, 1)", cfg.test_fraction)));
    }
    let desk = ModelConfig::desk();
    let mel = MelConfig::with_mels(desk.mel_bins);
    let n_samples = mel.samples_for(desk.audio_frames);
    let side = desk.frame_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let audio_noise = Normal::new(0.0, cfg.audio_noise.max(0.0)).map_err(|e| Error::input(e.to_string()))?;
    let frame_noise = Normal::new(0.0, cfg.frame_noise.max(0.0)).map_err(|e| Error::input(e.to_string()))?;

    // Stratified split: the last ⌊f·n_c⌋ clips of each class are test clips.
    let mut per_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..cfg.clips {
        per_class.entry(i % cfg.classes).or_default().push(i);
    }
    let mut test = HashSet::new();
    for members in per_class.values() {
        let n_test = (cfg.test_fraction * members.len() as f64).floor() as usize;
        test.extend(members[members.len() - n_test..].iter().copied());
    }

    let mut clips = Vec::with_capacity(cfg.clips);
    for i in 0..cfg.clips {
        let class = i % cfg.classes;
        let objects = class_objects(class, cfg.classes);
        // Per-clip object strengths, shared by both modalities.
        let weights: Vec<f64> = objects.iter().map(|_| rng.gen_range(0.4..1.0)).collect();
        let phases: Vec<f64> = objects.iter().map(|_| rng.gen_range(0.0..2.0 * PI)).collect();

        let sr = mel.sample_rate as f64;
        let mut tones: Vec<(f64, f64, f64)> = Vec::new();
        for (k, &o) in objects.iter().enumerate() {
            for f in object_tones(o, cfg.classes) {
                tones.push((f, TONE_AMP * weights[k], rng.gen_range(0.0..2.0 * PI)));
            }
        }
        if cfg.distractor > 0.0 {
            let mel_f = rng.gen_range(hz_to_mel(TONE_LOW_HZ)..hz_to_mel(TONE_HIGH_HZ));
            tones.push((mel_to_hz(mel_f), TONE_AMP * cfg.distractor * rng.gen_range(0.4..1.0), rng.gen_range(0.0..2.0 * PI)));
        }
        let mut f = COMB_HZ;
        while f < mel.f_max {
            tones.push((f, COMB_AMP, 0.0));
            f += COMB_HZ;
        }
        let waveform = (0..n_samples)
            .map(|t| {
                let time = t as f64 / sr;
                let s: f64 = tones.iter().map(|&(f, a, p)| a * (2.0 * PI * f * time + p).sin()).sum();
                (s + audio_noise.sample(&mut rng)) as f32
            })
            .collect();

        let mut frame = vec![0.2f64; side * side * 3];
        for (k, &o) in objects.iter().enumerate() {
            let color = object_color(o);
            let freq = 1.0 + (o % 4) as f64;
            for y in 0..side {
                for x in 0..side {
                    let u = if o % 2 == 0 { y } else { x } as f64;
                    let stripe = 0.5 + 0.5 * (2.0 * PI * freq * u / side as f64 + phases[k]).sin();
                    for c in 0..3 {
                        frame[(y * side + x) * 3 + c] += 0.3 * weights[k] * color[c] * stripe;
                    }
                }
            }
        }
        if cfg.distractor > 0.0 {
            let color = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let (vertical, freq, phase) = (rng.gen_bool(0.5), rng.gen_range(1..=4) as f64, rng.gen_range(0.0..2.0 * PI));
            let amp = 0.3 * cfg.distractor * rng.gen_range(0.4..1.0);
            for y in 0..side {
                for x in 0..side {
                    let u = if vertical { x } else { y } as f64;
                    let stripe = 0.5 + 0.5 * (2.0 * PI * freq * u / side as f64 + phase).sin();
                    for c in 0..3 {
                        frame[(y * side + x) * 3 + c] += amp * color[c] * stripe;
                    }
                }
            }
        }
        let frame = frame.into_iter().map(|v| (v + frame_noise.sample(&mut rng)).clamp(0.0, 1.0) as f32).collect();

        clips.push(SynthClip {
            clip: format!("clip_{i:04}"),
            class,
            objects,
            split: if test.contains(&i) { Split::Test } else { Split::Train },
            waveform,
            frame,
        });
    }
    Ok(clips)
}

/// Paths written by [`synth_corpus`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub scores: PathBuf,
    pub vocabulary: Vocabulary,
}

/// Writes waveforms, frames, `manifest.jsonl` and `scores.jsonl` under `dir`.
pub fn synth_corpus(cfg: &SynthConfig, seed: u64, dir: &Path) -> Result<SynthOutput> {
    let clips = synth_clips(cfg, seed)?;
    for sub in ["audio", "frames"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let desk = ModelConfig::desk();
    let mut entries = Vec::with_capacity(clips.len());
    for c in &clips {
        let audio = PathBuf::from("audio").join(format!("{}.f32", c.clip));
        let frame = PathBuf::from("frames").join(format!("{}.f32", c.clip));
        write_f32(&dir.join(&audio), &c.waveform)?;
        write_f32(&dir.join(&frame), &c.frame)?;
        entries.push(ClipEntry {
            clip: c.clip.clone(),
            audio: AudioSource::Waveform { path: audio, sample_rate: 16_000 },
            frame: FrameSource { path: frame, height: desk.frame_size, width: desk.frame_size },
            class: Some(c.class),
            multi_label: Some(c.objects.clone()),
            split: c.split,
        });
    }
    let manifest = CorpusManifest::new(dir.to_path_buf(), entries)?;
    let manifest_path = dir.join("manifest.jsonl");
    manifest.save(&manifest_path)?;

    let vocabulary = Vocabulary::numbered(cfg.classes);
    let latents: Vec<(String, Vec<usize>)> = clips.iter().map(|c| (c.clip.clone(), c.objects.clone())).collect();
    // Score noise uses its own stream so corpus content and scores vary independently.
    let vectors = synth_scores(&latents, cfg.classes, &cfg.scores, seed ^ 0x05c0_fe5e_ed5c_04e5_u64);
    let scores_path = dir.join("scores.jsonl");
    write_scores(&scores_path, &ScoreFile { vocabulary: vocabulary.clone(), vectors })?;
    Ok(SynthOutput { manifest: manifest_path, scores: scores_path, vocabulary })
}

pub(crate) fn shuffled(indices: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v = indices.to_vec();
    v.shuffle(rng);
    v
}
