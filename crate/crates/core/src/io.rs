//! Pixel CSV, JSON, and content-hash helpers.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{BandId, CloudClass5, PixelRecord, RadianceVector, ScienceVector, N_BANDS};

pub fn pixel_csv_header() -> Vec<&'static str> {
    let mut h = vec!["image_id", "row", "col"];
    h.extend(BandId::ALL.iter().map(|b| b.csv_column()));
    h.extend(["iwp", "particle_size", "cloud_top_height", "label"]);
    h
}

pub fn write_pixels_to<W: Write>(writer: W, pixels: &[PixelRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(pixel_csv_header())?;
    let mut fields: Vec<String> = Vec::with_capacity(15);
    for p in pixels {
        fields.clear();
        fields.push(p.image_id.to_string());
        fields.push(p.row.to_string());
        fields.push(p.col.to_string());
        fields.extend(p.radiance.0.iter().map(|v| v.to_string()));
        match &p.science {
            Some(s) => fields.extend(s.to_array().iter().map(|v| v.to_string())),
            None => fields.extend(std::iter::repeat_n(String::new(), 3)),
        }
        fields.push(p.label.map(|l| l.name().to_string()).unwrap_or_default());
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pixels(path: &Path, pixels: &[PixelRecord]) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_pixels_to(BufWriter::new(file), pixels).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema { path: path.to_path_buf(), msg: format!("{other:?}") },
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.trim().parse().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("column `{name}`: cannot parse `{raw}`: {e}"),
    })
}

/// `path` is used only for error messages.
pub fn read_pixels_from<R: Read>(reader: R, path: &Path) -> Result<Vec<PixelRecord>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let expected = pixel_csv_header();
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            msg: format!("header must be `{}`, found `{}`", expected.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut pixels = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = r.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse { path: path.to_path_buf(), line, msg: e.to_string() }
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != expected.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected {} fields, found {}", expected.len(), record.len()),
            });
        }
        let image_id = parse_field(path, line, "image_id", &record[0])?;
        let row = parse_field(path, line, "row", &record[1])?;
        let col = parse_field(path, line, "col", &record[2])?;
        let mut tb = [0.0; N_BANDS];
        for b in 0..N_BANDS {
            let v: f64 = parse_field(path, line, expected[3 + b], &record[3 + b])?;
            if !v.is_finite() {
                return Err(Error::Parse { path: path.to_path_buf(), line, msg: format!("non-finite `{}`", expected[3 + b]) });
            }
            tb[b] = v;
        }
        let science_raw = [&record[11], &record[12], &record[13]];
        let science = if science_raw.iter().all(|s| s.trim().is_empty()) {
            None
        } else {
            let mut s = [0.0; 3];
            for i in 0..3 {
                s[i] = parse_field(path, line, expected[11 + i], science_raw[i])?;
            }
            let s = ScienceVector::from_array(s);
            if !s.is_valid() {
                return Err(Error::Parse { path: path.to_path_buf(), line, msg: "science values must be finite and nonnegative".into() });
            }
            Some(s)
        };
        let label = match record[14].trim() {
            "" => None,
            name => Some(parse_field::<CloudClass5>(path, line, "label", name)?),
        };
        pixels.push(PixelRecord { image_id, row, col, radiance: RadianceVector(tb), science, label });
    }
    Ok(pixels)
}

pub fn read_pixels(path: &Path) -> Result<Vec<PixelRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pixels_from(BufReader::new(file), path)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json_string(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of the canonical CSV rendering of a pixel set.
pub fn hash_pixels(pixels: &[PixelRecord]) -> String {
    let mut hasher = HashWriter(Sha256::new());
    write_pixels_to(&mut hasher, pixels).expect("hashing never fails");
    hex::encode(hasher.0.finalize())
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    sha256_hex(to_json_string(value).as_bytes())
}
