//! Dataset download with magic-number verification and atomic writes.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::data::{
    locate_file, parse_idx_images, parse_idx_labels, read_maybe_gzip, DatasetName, Split,
};
use crate::error::{Error, Result};

pub trait Fetcher {
    fn get(&self, url: &str) -> Result<Vec<u8>>;
}

/// Plain HTTP(S) GET.
pub struct HttpFetcher;

const MAX_DOWNLOAD: u64 = 128 << 20;

impl Fetcher for HttpFetcher {
    fn get(&self, url: &str) -> Result<Vec<u8>> {
        let fail = |reason: String| Error::Fetch { url: url.to_string(), reason };
        let mut response = ureq::get(url).call().map_err(|e| fail(e.to_string()))?;
        response
            .body_mut()
            .with_config()
            .limit(MAX_DOWNLOAD)
            .read_to_vec()
            .map_err(|e| fail(e.to_string()))
    }
}

pub fn default_base_url(name: DatasetName) -> &'static str {
    match name {
        DatasetName::Mnist => "https://ossci-datasets.s3.amazonaws.com/mnist/",
        DatasetName::FashionMnist => "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
    }
}

/// The four archive stems with a flag telling image files from label files.
pub fn archive_stems() -> [(String, bool); 4] {
    [
        (Split::Train.images_file(), true),
        (Split::Train.labels_file(), false),
        (Split::Test.images_file(), true),
        (Split::Test.labels_file(), false),
    ]
}

fn verify(bytes: &[u8], images: bool, path: &Path) -> Result<()> {
    if images {
        parse_idx_images(bytes, path).map(|_| ())
    } else {
        parse_idx_labels(bytes, path).map(|_| ())
    }
}

fn gunzip(bytes: &[u8], url: &str) -> Result<Vec<u8>> {
    if !bytes.starts_with(&[0x1f, 0x8b]) {
        return Ok(bytes.to_vec());
    }
    let mut out = Vec::new();
    GzDecoder::new(bytes)
        .read_to_end(&mut out)
        .map_err(|e| Error::Fetch { url: url.to_string(), reason: format!("bad gzip stream: {e}") })?;
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct FetchReport {
    pub downloaded: Vec<PathBuf>,
    pub kept: Vec<PathBuf>,
}

/// Ensures `dir` holds valid copies of the four files. Valid files are left
/// alone; missing or corrupt ones are downloaded, verified, then moved into
/// place. A failed download leaves the slot as it was.
pub fn fetch_dataset(fetcher: &dyn Fetcher, base_url: &str, dir: &Path) -> Result<FetchReport> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut report = FetchReport::default();
    for (stem, images) in archive_stems() {
        if let Ok(existing) = locate_file(dir, &stem) {
            if read_maybe_gzip(&existing).and_then(|b| verify(&b, images, &existing)).is_ok() {
                report.kept.push(existing);
                continue;
            }
        }
        let url = format!("{base_url}{stem}.gz");
        let payload = fetcher.get(&url)?;
        let target = dir.join(format!("{stem}.gz"));
        verify(&gunzip(&payload, &url)?, images, &target).map_err(|e| Error::Fetch {
            url: url.clone(),
            reason: format!("downloaded file failed verification: {e}"),
        })?;
        write_atomic(&target, &payload)?;
        // A corrupt uncompressed copy would shadow the new archive.
        let raw = dir.join(&stem);
        if raw.is_file() {
            fs::remove_file(&raw).map_err(|e| Error::io(&raw, e))?;
        }
        report.downloaded.push(target);
    }
    Ok(report)
}
