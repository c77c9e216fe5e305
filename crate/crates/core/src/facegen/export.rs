//! Dataset export and the matching condition loaders.
//!
//! Layout of an export directory for sample `i`:
//! `image_{i:05}.pgm`, `mask_{i:05}.pgm` (pixel = class index),
//! `sketch_{i:05}.pgm` (0 or 255), `lowres_{i:05}.pgm`, and one row per
//! sample in `attributes.csv` and `params.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{
    derive_conditions, pgm, render, sample_params, FaceParams, Image, ATTR_BITS, ATTR_NAMES, FIELD_RANGES,
    NUM_CLASSES,
};
use crate::error::{Error, Result};

pub const ATTR_CSV: &str = "attributes.csv";
pub const PARAMS_CSV: &str = "params.csv";

fn side_of(len: usize, what: &str) -> Result<usize> {
    let s = (len as f64).sqrt().round() as usize;
    if s * s != len {
        return Err(Error::InvalidArgument(format!("{what} is not square")));
    }
    Ok(s)
}

/// Renders faces for `seeds` at `side` and writes images, conditions and CSVs to `dir`.
pub fn export_dataset(dir: &Path, seeds: &[u64], side: usize) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut attr_csv = String::from("index,seed");
    for n in ATTR_NAMES {
        let _ = write!(attr_csv, ",{n}");
    }
    attr_csv.push('\n');
    let mut params_csv = String::from("index,seed");
    for (n, _, _) in FIELD_RANGES {
        let _ = write!(params_csv, ",{n}");
    }
    params_csv.push('\n');

    for (i, &seed) in seeds.iter().enumerate() {
        let p = sample_params(seed)?;
        let img = render(&p, side);
        let cs = derive_conditions(&p, side);
        pgm::write_image(&dir.join(format!("image_{i:05}.pgm")), &img)?;
        let mask = cs.mask.as_ref().expect("derived conditions are complete");
        pgm::write(&dir.join(format!("mask_{i:05}.pgm")), side, side, mask)?;
        let sketch: Vec<u8> = cs.sketch.as_ref().expect("derived").iter().map(|&e| e * 255).collect();
        pgm::write(&dir.join(format!("sketch_{i:05}.pgm")), side, side, &sketch)?;
        let lr = Image::new(side / 4, cs.lowres.clone().expect("derived"))?;
        pgm::write_image(&dir.join(format!("lowres_{i:05}.pgm")), &lr)?;

        let _ = write!(attr_csv, "{i},{seed}");
        for b in cs.attr.expect("derived") {
            let _ = write!(attr_csv, ",{b}");
        }
        attr_csv.push('\n');
        let _ = write!(params_csv, "{i},{seed}");
        for v in p.to_array() {
            let _ = write!(params_csv, ",{v}");
        }
        params_csv.push('\n');
    }
    let attr_path = dir.join(ATTR_CSV);
    fs::write(&attr_path, attr_csv).map_err(|e| Error::io(&attr_path, e))?;
    let params_path = dir.join(PARAMS_CSV);
    fs::write(&params_path, params_csv).map_err(|e| Error::io(&params_path, e))
}

pub fn read_mask(path: &Path) -> Result<Vec<u8>> {
    let (w, h, bytes) = pgm::read(path)?;
    if w != h || bytes.iter().any(|&c| c as usize >= NUM_CLASSES) {
        return Err(Error::InvalidArgument(format!(
            "{}: mask must be square with classes 0..{NUM_CLASSES}",
            path.display()
        )));
    }
    Ok(bytes)
}

/// Any nonzero pixel is an edge.
pub fn read_sketch(path: &Path) -> Result<Vec<u8>> {
    let (w, h, bytes) = pgm::read(path)?;
    if w != h {
        return Err(Error::InvalidArgument(format!("{}: sketch must be square", path.display())));
    }
    Ok(bytes.into_iter().map(|b| u8::from(b != 0)).collect())
}

pub fn read_lowres(path: &Path) -> Result<Vec<f64>> {
    let img = pgm::read_image(path)?;
    side_of(img.pixels.len(), "low-res image")?;
    Ok(img.pixels)
}

/// Attribute bits of data row `row` (0-based) of an attribute CSV. The
/// last six columns are taken as the bits.
pub fn read_attr(path: &Path, row: usize) -> Result<[u8; ATTR_BITS]> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::InvalidArgument(format!("{}: {m}", path.display()));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let has_header = first.split(',').any(|f| f.trim().parse::<f64>().is_err());
    let mut rows: Vec<&str> = if has_header { vec![] } else { vec![first] };
    rows.extend(lines);
    let line = rows.get(row).ok_or_else(|| bad(format!("no data row {row}")))?;
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < ATTR_BITS {
        return Err(bad(format!("row {row} has fewer than {ATTR_BITS} columns")));
    }
    let mut bits = [0u8; ATTR_BITS];
    for (b, f) in bits.iter_mut().zip(&fields[fields.len() - ATTR_BITS..]) {
        *b = match *f {
            "0" => 0,
            "1" => 1,
            other => return Err(bad(format!("attribute value `{other}` is not 0 or 1"))),
        };
    }
    Ok(bits)
}

/// Parameters of data row `row` of a `params.csv`.
pub fn read_params(path: &Path, row: usize) -> Result<FaceParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::InvalidArgument(format!("{}: {m}", path.display()));
    let line = text
        .lines()
        .skip(1)
        .nth(row)
        .ok_or_else(|| bad(format!("no data row {row}")))?;
    let fields: Vec<f64> = line
        .split(',')
        .skip(2)
        .map(|f| f.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| bad(e.to_string()))?;
    let arr: [f64; FIELD_RANGES.len()] = fields
        .try_into()
        .map_err(|_| bad("wrong number of parameter columns".into()))?;
    Ok(FaceParams::from_array(arr))
}
