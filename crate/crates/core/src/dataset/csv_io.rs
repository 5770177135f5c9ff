//! Dataset CSV format.
//!
//! ```text
//! device,ci,rp_id,x,y,<ap_mac_1>,...,<ap_mac_M>
//! ```
//!
//! One row per fingerprint, RSS in dBm, invisible APs written as `-100`.
//! AP columns must be MAC-48 addresses (`aa:bb:cc:dd:ee:ff`); any other
//! column name is rejected. The building id is taken from the file stem.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Fingerprint, FingerprintDataset, ReferencePoint, RpId, INVISIBLE_DBM, MAX_DBM};
use crate::error::{Error, Result};

const FIXED: [&str; 5] = ["device", "ci", "rp_id", "x", "y"];

fn is_mac(s: &str) -> bool {
    let parts: Vec<&str> = s.split(':').collect();
    parts.len() == 6
        && parts
            .iter()
            .all(|p| p.len() == 2 && p.chars().all(|c| c.is_ascii_hexdigit()))
}

fn malformed(line: u64, message: impl Into<String>) -> Error {
    Error::MalformedRow { line, message: message.into() }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    malformed(line, e.to_string())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<FingerprintDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let building = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(file, building)
}

pub fn save_csv(ds: &FingerprintDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(ds, file)
}

pub fn read_csv<R: Read>(reader: R, building_id: impl Into<String>) -> Result<FingerprintDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.len() < FIXED.len() || header.iter().take(FIXED.len()).ne(FIXED) {
        return Err(Error::InvalidHeader(format!(
            "expected leading columns `{}`",
            FIXED.join(",")
        )));
    }
    let ap_universe: Vec<String> = header.iter().skip(FIXED.len()).map(str::to_owned).collect();
    if let Some(bad) = ap_universe.iter().find(|c| !is_mac(c)) {
        return Err(Error::UnknownColumn(bad.clone()));
    }

    let mut rps: BTreeMap<RpId, ReferencePoint> = BTreeMap::new();
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("");
        let device_id = field(0).to_owned();
        if device_id.is_empty() {
            return Err(malformed(line, "empty device"));
        }
        let ci: u32 = field(1)
            .parse()
            .map_err(|_| malformed(line, format!("bad ci `{}`", field(1))))?;
        let rp_id = RpId(
            field(2)
                .parse()
                .map_err(|_| malformed(line, format!("bad rp_id `{}`", field(2))))?,
        );
        let coord = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(line, format!("bad {} `{}`", FIXED[i], field(i))))
        };
        let (x, y) = (coord(3)?, coord(4)?);
        match rps.get(&rp_id) {
            Some(rp) if rp.x != x || rp.y != y => {
                return Err(malformed(line, format!("{rp_id} has conflicting coordinates")));
            }
            Some(_) => {}
            None => {
                rps.insert(rp_id, ReferencePoint { rp_id, x, y });
            }
        }

        let mut ap_values = Vec::with_capacity(ap_universe.len());
        for (j, ap) in ap_universe.iter().enumerate() {
            let raw = field(FIXED.len() + j);
            let v: f64 = raw
                .parse()
                .map_err(|_| malformed(line, format!("column `{ap}`: bad RSS `{raw}`")))?;
            if !(INVISIBLE_DBM..=MAX_DBM).contains(&v) {
                return Err(Error::RssOutOfRange { line, column: ap.clone(), value: v });
            }
            ap_values.push(v);
        }
        records.push(Fingerprint { ap_values, rp_id, device_id, ci });
    }
    FingerprintDataset::new(building_id, ap_universe, rps.into_values().collect(), records)
}

pub fn write_csv<W: Write>(ds: &FingerprintDataset, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let io = |e: csv::Error| malformed(0, e.to_string());
    w.write_record(FIXED.iter().copied().chain(ds.ap_universe().iter().map(String::as_str)))
        .map_err(io)?;
    for r in ds.records() {
        let rp = ds.rp(r.rp_id).ok_or(Error::UnknownRp(r.rp_id.0))?;
        let mut row = vec![
            r.device_id.clone(),
            r.ci.to_string(),
            r.rp_id.0.to_string(),
            rp.x.to_string(),
            rp.y.to_string(),
        ];
        row.extend(r.ap_values.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| malformed(0, e.to_string()))?;
    Ok(())
}
