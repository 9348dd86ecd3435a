//! Raw dataset directory layout and the preprocessed array cache.
//!
//! Raw layout: `labels.csv` (`index,label`), `frames/<index>.png` (480×480
//! RGB or 80×80 grayscale) and either `audio/<index>.wav` (one 1470-sample
//! mono snippet each) or a single `audio.wav` that is segmented and indexed
//! by snippet position.
//!
//! Cache layout: `<part>_{visual,audio,waveform,labels,index}.npy` for each
//! of `train`, `validation`, `test`, plus `manifest.json` recording shapes,
//! preprocessing parameters and a sha256 per file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3, Axis};
use ndarray_npy::{read_npy, write_npy, ReadableElement, WritableElement};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    grayscale_resize, segment_audio, AudioSnippet, DatasetSplit, PairedSample, RawVisualFrame, Spectrogram,
    VisualFrame, FFT_SIZE, HOP, KEPT_BINS, RAW_SIDE, SAMPLE_RATE, SIDE, SNIPPET_LEN,
};
use crate::error::{CmktError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessParams {
    pub fft_size: usize,
    pub hop: usize,
    pub kept_bins: usize,
    pub db_floor: f64,
    pub luma: [f64; 3],
    pub resize_block: usize,
    pub snippet_len: usize,
    pub sample_rate: u32,
    pub split_ratio: (u32, u32, u32),
    pub split_seed: u64,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            fft_size: FFT_SIZE,
            hop: HOP,
            kept_bins: KEPT_BINS,
            db_floor: -80.0,
            luma: [0.299, 0.587, 0.114],
            resize_block: RAW_SIDE / SIDE,
            snippet_len: SNIPPET_LEN,
            sample_rate: SAMPLE_RATE,
            split_ratio: (8, 1, 1),
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub file: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub format_version: u32,
    pub params: PreprocessParams,
    pub entries: BTreeMap<String, CacheEntry>,
}

impl CacheManifest {
    /// Digest over every entry's hash; identifies the cached data.
    pub fn data_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, e) in &self.entries {
            h.update(k.as_bytes());
            h.update(e.sha256.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub(crate) fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CmktError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn read_labels(path: &Path) -> Result<BTreeMap<usize, u8>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CmktError::io(path, io),
        other => CmktError::Dataset(format!("{}: {other:?}", path.display())),
    })?;
    let mut out = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| rec.get(i).map(str::trim).and_then(|s| s.parse::<usize>().ok());
        match (parse(0), parse(1)) {
            (Some(idx), Some(l @ 0..=1)) => {
                if out.insert(idx, l as u8).is_some() {
                    return Err(CmktError::Dataset(format!("labels.csv: duplicate index {idx}")));
                }
            }
            _ => return Err(CmktError::Dataset(format!("labels.csv row {}: expected `index,label` with label 0/1", line + 2))),
        }
    }
    Ok(out)
}

fn numbered_files(dir: &Path, ext: &str) -> Result<BTreeMap<usize, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(|e| CmktError::io(dir, e))? {
        let path = entry.map_err(|e| CmktError::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        if let Some(idx) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<usize>().ok()) {
            out.insert(idx, path);
        }
    }
    Ok(out)
}

fn load_frame(path: &Path, index: usize) -> Result<VisualFrame> {
    let img = image::open(path)?;
    match (img.width() as usize, img.height() as usize) {
        (RAW_SIDE, RAW_SIDE) => {
            let rgb = img.to_rgb8();
            let pixels = Array3::from_shape_fn((RAW_SIDE, RAW_SIDE, 3), |(r, c, k)| {
                rgb.get_pixel(c as u32, r as u32)[k] as f64
            });
            grayscale_resize(&RawVisualFrame { pixels, index })
        }
        (SIDE, SIDE) => {
            let g = img.to_luma8();
            Ok(VisualFrame { pixels: Array2::from_shape_fn((SIDE, SIDE), |(r, c)| g.get_pixel(c as u32, r as u32)[0] as f64 / 255.0) })
        }
        (w, h) => Err(CmktError::Dataset(format!("{}: unsupported frame size {w}x{h}", path.display()))),
    }
}

fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(CmktError::Dataset(format!("{}: expected mono audio", path.display())));
    }
    if spec.sample_rate != SAMPLE_RATE {
        log::warn!("{}: sample rate {} Hz, expected {SAMPLE_RATE}", path.display(), spec.sample_rate);
    }
    match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().map(|s| Ok(s? as f64)).collect(),
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader.samples::<i32>().map(|s| Ok(s? as f64 / scale)).collect()
        }
    }
}

/// Reads a raw dataset directory into pairs ordered by index. Every problem
/// found is listed in the returned error.
pub fn load_raw_dataset(dir: &Path) -> Result<Vec<PairedSample>> {
    let labels_path = dir.join("labels.csv");
    if !labels_path.exists() {
        return Err(CmktError::MissingArtifact { path: labels_path, hint: "expected `index,label` rows".into() });
    }
    let labels = read_labels(&labels_path)?;
    let frames = numbered_files(&dir.join("frames"), "png")?;
    let wavs = numbered_files(&dir.join("audio"), "wav")?;
    let long = dir.join("audio.wav");
    let long_snippets = if wavs.is_empty() && long.exists() { Some(segment_audio(&read_wav(&long)?)?) } else { None };

    let mut problems = Vec::new();
    let indices: BTreeSet<usize> = labels.keys().chain(frames.keys()).copied().collect();
    let mut out = Vec::with_capacity(indices.len());
    for idx in indices {
        let Some(&label) = labels.get(&idx) else {
            problems.push(format!("index {idx}: missing label row"));
            continue;
        };
        let Some(frame_path) = frames.get(&idx) else {
            problems.push(format!("index {idx}: missing frames/{idx}.png"));
            continue;
        };
        let audio = match (&long_snippets, wavs.get(&idx)) {
            (Some(snips), _) => snips.get(idx).cloned().ok_or_else(|| format!("index {idx}: beyond end of audio.wav")),
            (None, Some(p)) => read_wav(p)
                .map_err(|e| e.to_string())
                .and_then(|s| AudioSnippet::new(s).map_err(|e| format!("{}: {e}", p.display()))),
            (None, None) => Err(format!("index {idx}: missing audio/{idx}.wav")),
        };
        let visual = load_frame(frame_path, idx).map_err(|e| e.to_string());
        match (visual, audio) {
            (Ok(v), Ok(a)) => out.push(PairedSample::new(v, a, label, idx)?),
            (v, a) => problems.extend(v.err().into_iter().chain(a.err())),
        }
    }
    if !problems.is_empty() {
        return Err(CmktError::Dataset(problems.join("; ")));
    }
    if out.is_empty() {
        return Err(CmktError::Empty(format!("no samples in {}", dir.display())));
    }
    Ok(out)
}

/// Writes pairs in the raw layout: 80×80 grayscale PNG frames, one 32-bit
/// float WAV per snippet, and `labels.csv`.
pub fn write_raw_dataset(dir: &Path, samples: &[PairedSample]) -> Result<()> {
    for sub in ["frames", "audio"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| CmktError::io(dir.join(sub), e))?;
    }
    let mut labels = csv::Writer::from_path(dir.join("labels.csv"))?;
    labels.write_record(["index", "label"])?;
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    for s in samples {
        let img = image::GrayImage::from_fn(SIDE as u32, SIDE as u32, |c, r| {
            image::Luma([(s.visual.pixels[[r as usize, c as usize]] * 255.0).round() as u8])
        });
        img.save(dir.join("frames").join(format!("{}.png", s.index)))?;
        let mut w = hound::WavWriter::create(dir.join("audio").join(format!("{}.wav", s.index)), spec)?;
        for &x in &s.audio_raw.samples {
            w.write_sample(x as f32)?;
        }
        w.finalize()?;
        labels.write_record([s.index.to_string(), s.label.to_string()])?;
    }
    labels.flush().map_err(|e| CmktError::io(dir.join("labels.csv"), e))?;
    Ok(())
}

fn put<A, D>(dir: &Path, entries: &mut BTreeMap<String, CacheEntry>, key: String, arr: &ndarray::Array<A, D>, dtype: &str) -> Result<()>
where
    A: WritableElement,
    D: ndarray::Dimension,
{
    let file = format!("{key}.npy");
    let path = dir.join(&file);
    write_npy(&path, arr).map_err(|e| CmktError::Npy(format!("{}: {e}", path.display())))?;
    let sha256 = sha256_file(&path)?;
    entries.insert(key, CacheEntry { file, shape: arr.shape().to_vec(), dtype: dtype.into(), sha256 });
    Ok(())
}

/// Writes the split to `dir`. Identical inputs produce byte-identical files.
pub fn save_cache(dir: &Path, split: &DatasetSplit, params: &PreprocessParams) -> Result<CacheManifest> {
    fs::create_dir_all(dir).map_err(|e| CmktError::io(dir, e))?;
    let mut entries = BTreeMap::new();
    for (part, samples) in split.parts() {
        let n = samples.len();
        let mut vis = Array3::zeros((n, SIDE, SIDE));
        let mut aud = Array3::zeros((n, SIDE, SIDE));
        let mut wav = Array2::zeros((n, SNIPPET_LEN));
        for (i, s) in samples.iter().enumerate() {
            vis.index_axis_mut(Axis(0), i).assign(&s.visual.pixels);
            aud.index_axis_mut(Axis(0), i).assign(&s.audio_spec.pixels);
            wav.row_mut(i).assign(&Array1::from(s.audio_raw.samples.clone()));
        }
        let labels: Array1<u8> = samples.iter().map(|s| s.label).collect();
        let index: Array1<u64> = samples.iter().map(|s| s.index as u64).collect();
        put(dir, &mut entries, format!("{part}_visual"), &vis, "f64")?;
        put(dir, &mut entries, format!("{part}_audio"), &aud, "f64")?;
        put(dir, &mut entries, format!("{part}_waveform"), &wav, "f64")?;
        put(dir, &mut entries, format!("{part}_labels"), &labels, "u8")?;
        put(dir, &mut entries, format!("{part}_index"), &index, "u64")?;
    }
    let manifest = CacheManifest { format_version: 1, params: params.clone(), entries };
    let mpath = dir.join("manifest.json");
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| CmktError::io(&mpath, e))?;
    Ok(manifest)
}

fn get<A, D>(dir: &Path, m: &CacheManifest, key: &str) -> Result<ndarray::Array<A, D>>
where
    A: ReadableElement,
    D: ndarray::Dimension,
{
    let e = m.entries.get(key).ok_or_else(|| CmktError::Dataset(format!("cache manifest lacks `{key}`")))?;
    let path = dir.join(&e.file);
    if !path.exists() {
        return Err(CmktError::MissingArtifact { path, hint: "re-run preprocess".into() });
    }
    if sha256_file(&path)? != e.sha256 {
        return Err(CmktError::Dataset(format!("{}: checksum mismatch, re-run preprocess", path.display())));
    }
    read_npy(&path).map_err(|err| CmktError::Npy(format!("{}: {err}", path.display())))
}

/// Loads and checksum-verifies a cache written by [`save_cache`].
pub fn load_cache(dir: &Path) -> Result<(DatasetSplit, CacheManifest)> {
    let mpath = dir.join("manifest.json");
    if !mpath.exists() {
        return Err(CmktError::MissingArtifact { path: mpath, hint: "run `cmkt preprocess` first".into() });
    }
    let text = fs::read_to_string(&mpath).map_err(|e| CmktError::io(&mpath, e))?;
    let manifest: CacheManifest = serde_json::from_str(&text)?;
    let mut parts: Vec<Vec<PairedSample>> = Vec::new();
    for part in ["train", "validation", "test"] {
        let vis: Array3<f64> = get(dir, &manifest, &format!("{part}_visual"))?;
        let aud: Array3<f64> = get(dir, &manifest, &format!("{part}_audio"))?;
        let wav: Array2<f64> = get(dir, &manifest, &format!("{part}_waveform"))?;
        let labels: Array1<u8> = get(dir, &manifest, &format!("{part}_labels"))?;
        let index: Array1<u64> = get(dir, &manifest, &format!("{part}_index"))?;
        let n = labels.len();
        if vis.len_of(Axis(0)) != n || aud.len_of(Axis(0)) != n || wav.nrows() != n || index.len() != n {
            return Err(CmktError::Dataset(format!("cache part `{part}` has inconsistent lengths")));
        }
        parts.push(
            (0..n)
                .map(|i| PairedSample {
                    visual: VisualFrame { pixels: vis.index_axis(Axis(0), i).to_owned() },
                    audio_raw: AudioSnippet { samples: wav.row(i).to_vec() },
                    audio_spec: Spectrogram { pixels: aud.index_axis(Axis(0), i).to_owned() },
                    label: labels[i],
                    index: index[i] as usize,
                })
                .collect(),
        );
    }
    let test = parts.pop().unwrap();
    let validation = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok((DatasetSplit { train, validation, test }, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, split_dataset, SyntheticConfig};

    fn data(n: usize) -> Vec<PairedSample> {
        generate_synthetic(&SyntheticConfig { n_samples: n, seed: 2, ..Default::default() }).unwrap()
    }

    #[test]
    fn cache_round_trip_and_byte_identity() {
        let split = split_dataset(data(12), (8, 1, 1), 0).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = save_cache(a.path(), &split, &PreprocessParams::default()).unwrap();
        let mb = save_cache(b.path(), &split, &PreprocessParams::default()).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(
            fs::read(a.path().join("manifest.json")).unwrap(),
            fs::read(b.path().join("manifest.json")).unwrap()
        );
        let (back, _) = load_cache(a.path()).unwrap();
        assert_eq!(back, split);
    }

    #[test]
    fn tampered_cache_is_rejected() {
        let split = split_dataset(data(6), (8, 1, 1), 0).unwrap();
        let d = tempfile::tempdir().unwrap();
        save_cache(d.path(), &split, &PreprocessParams::default()).unwrap();
        fs::write(d.path().join("test_labels.npy"), b"junk").unwrap();
        assert!(load_cache(d.path()).is_err());
    }

    #[test]
    fn raw_round_trip() {
        let samples = data(5);
        let d = tempfile::tempdir().unwrap();
        write_raw_dataset(d.path(), &samples).unwrap();
        let back = load_raw_dataset(d.path()).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in back.iter().zip(&samples) {
            assert_eq!(a.label, b.label);
            assert!(a.visual.pixels.iter().zip(&b.visual.pixels).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-12));
            assert!(a.audio_raw.samples.iter().zip(&b.audio_raw.samples).all(|(x, y)| (x - y).abs() < 1e-6));
        }
    }

    #[test]
    fn missing_label_row_names_index() {
        let samples = data(3);
        let d = tempfile::tempdir().unwrap();
        write_raw_dataset(d.path(), &samples).unwrap();
        fs::write(d.path().join("labels.csv"), "index,label\n0,1\n2,0\n").unwrap();
        let err = load_raw_dataset(d.path()).unwrap_err().to_string();
        assert!(err.contains("index 1"), "{err}");
    }
}
