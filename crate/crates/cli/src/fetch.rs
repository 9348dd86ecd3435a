//! Download of the public dataset archive from a Zenodo record.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};

pub const DEFAULT_RECORD_URL: &str = "https://zenodo.org/api/records/12604782";
const MARKER: &str = ".cmkt-fetch.json";

/// Blocking GET returning the response body.
pub trait Transport {
    fn get(&self, url: &str) -> Result<Box<dyn Read>>;
}

pub struct HttpTransport;

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> Result<Box<dyn Read>> {
        let resp = ureq::get(url).call().with_context(|| format!("GET {url}"))?;
        Ok(Box::new(resp.into_body().into_reader()))
    }
}

#[derive(Debug, Deserialize)]
struct Record {
    files: Vec<RecordFile>,
}

#[derive(Debug, Deserialize)]
struct RecordFile {
    key: String,
    checksum: String,
    links: FileLinks,
}

#[derive(Debug, Deserialize)]
struct FileLinks {
    #[serde(rename = "self")]
    self_: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchedFile {
    pub key: String,
    pub md5: String,
}

/// Completion marker left in the destination directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchMarker {
    pub record_url: String,
    pub files: Vec<FetchedFile>,
    /// Dataset root relative to the destination directory.
    pub dataset_dir: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchOutcome {
    pub dataset_dir: PathBuf,
    pub skipped: bool,
}

fn md5_of(key: &str, checksum: &str) -> Result<String> {
    match checksum.split_once(':') {
        Some(("md5", hex)) => Ok(hex.to_ascii_lowercase()),
        Some((algo, _)) => bail!("{key}: unsupported checksum algorithm `{algo}`"),
        None => Ok(checksum.to_ascii_lowercase()),
    }
}

fn safe_key(key: &str) -> Result<()> {
    if key.is_empty() || key.contains(['/', '\\']) || key.starts_with('.') {
        bail!("refusing record file name `{key}`");
    }
    Ok(())
}

/// Copies `body` to `path` while hashing it.
fn download(mut body: impl Read, path: &Path) -> Result<String> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut h = Md5::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = match body.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e).context("reading response body"),
        };
        h.update(&buf[..n]);
        f.write_all(&buf[..n]).with_context(|| format!("writing {}", path.display()))?;
    }
    f.sync_all()?;
    Ok(hex_lower(&h.finalize()))
}

fn hex_lower(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn is_dataset_root(dir: &Path) -> bool {
    dir.join("labels.csv").is_file() && dir.join("frames").is_dir() && (dir.join("audio").is_dir() || dir.join("audio.wav").is_file())
}

/// Breadth-first search for a directory with the raw dataset layout.
pub fn find_dataset_root(dest: &Path, max_depth: usize) -> Option<PathBuf> {
    let mut level = vec![dest.to_path_buf()];
    for _ in 0..=max_depth {
        let mut next = Vec::new();
        for dir in level {
            if is_dataset_root(&dir) {
                return Some(dir);
            }
            if let Ok(rd) = fs::read_dir(&dir) {
                let mut subs: Vec<PathBuf> = rd.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
                subs.sort();
                next.extend(subs);
            }
        }
        level = next;
    }
    None
}

fn read_marker(dest: &Path) -> Option<FetchMarker> {
    let text = fs::read_to_string(dest.join(MARKER)).ok()?;
    serde_json::from_str(&text).ok()
}

/// Downloads every file of the record into `dest`, verifies its md5,
/// unpacks zip archives and locates the dataset layout. A complete previous
/// fetch into `dest` makes this a no-op unless `force` is set. On a checksum
/// mismatch every file downloaded by this call is removed.
pub fn fetch(transport: &dyn Transport, record_url: &str, dest: &Path, force: bool) -> Result<FetchOutcome> {
    if !force {
        if let Some(m) = read_marker(dest) {
            let root = dest.join(&m.dataset_dir);
            if is_dataset_root(&root) {
                log::info!("fetch: {} already complete", dest.display());
                return Ok(FetchOutcome { dataset_dir: root, skipped: true });
            }
        }
    }
    let mut body = String::new();
    transport.get(record_url)?.read_to_string(&mut body).context("reading record metadata")?;
    let record: Record = serde_json::from_str(&body).with_context(|| format!("parsing record metadata from {record_url}"))?;
    if record.files.is_empty() {
        bail!("record {record_url} lists no files");
    }
    fs::create_dir_all(dest).with_context(|| format!("creating {}", dest.display()))?;
    let _ = fs::remove_file(dest.join(MARKER));

    let mut written: Vec<PathBuf> = Vec::new();
    let mut fetched = Vec::new();
    for file in &record.files {
        safe_key(&file.key)?;
        let want = md5_of(&file.key, &file.checksum)?;
        let part = dest.join(format!("{}.part", file.key));
        let target = dest.join(&file.key);
        log::info!("fetch: downloading {}", file.key);
        let result = transport.get(&file.links.self_).and_then(|b| download(b, &part));
        let got = match result {
            Ok(got) => got,
            Err(e) => {
                let _ = fs::remove_file(&part);
                remove_all(&written);
                return Err(e);
            }
        };
        if got != want {
            let _ = fs::remove_file(&part);
            remove_all(&written);
            bail!("checksum mismatch for {}: expected md5 {want}, got {got}; partial files removed", file.key);
        }
        fs::rename(&part, &target)?;
        written.push(target);
        fetched.push(FetchedFile { key: file.key.clone(), md5: got });
    }

    for path in &written {
        if path.extension().and_then(|e| e.to_str()) == Some("zip") {
            log::info!("fetch: unpacking {}", path.display());
            let f = fs::File::open(path)?;
            let mut archive = zip::ZipArchive::new(f).with_context(|| format!("opening {}", path.display()))?;
            archive.extract(dest).with_context(|| format!("unpacking {}", path.display()))?;
        }
    }

    let root = find_dataset_root(dest, 4).ok_or_else(|| {
        anyhow!(
            "no directory under {} has the frames/, audio/ (or audio.wav) and labels.csv layout; \
             arrange the unpacked files in that layout and run `cmkt preprocess --raw <dir>`",
            dest.display()
        )
    })?;
    let rel = root.strip_prefix(dest).unwrap_or(Path::new("")).to_string_lossy().into_owned();
    let marker = FetchMarker { record_url: record_url.into(), files: fetched, dataset_dir: rel };
    fs::write(dest.join(MARKER), serde_json::to_string_pretty(&marker)?)?;
    Ok(FetchOutcome { dataset_dir: root, skipped: false })
}

fn remove_all(paths: &[PathBuf]) {
    for p in paths {
        let _ = fs::remove_file(p);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_field_forms() {
        assert_eq!(md5_of("a", "md5:ABC").unwrap(), "abc");
        assert_eq!(md5_of("a", "abc").unwrap(), "abc");
        assert!(md5_of("a", "sha256:abc").is_err());
    }

    #[test]
    fn unsafe_keys_rejected() {
        for k in ["../x", "a/b", ".hidden", ""] {
            assert!(safe_key(k).is_err(), "{k}");
        }
        safe_key("data.zip").unwrap();
    }

    #[test]
    fn md5_known_value() {
        let tmp = tempfile::tempdir().unwrap();
        let got = download(&b"abc"[..], &tmp.path().join("f")).unwrap();
        assert_eq!(got, "900150983cd24fb0d6963f7d28e17f72");
    }
}
