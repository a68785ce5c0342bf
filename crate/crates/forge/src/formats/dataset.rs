//! Synthetic datasets: `ODMRSYN1` binary and CSV.
//!
//! ```text
//! "ODMRSYN1"  u32 count
//! { f32 * 101 input, f32 * 5 target, f32 snr, f32 photons } * count
//! ```
//!
//! The CSV layout has the same columns, one spectrum per row, with a header
//! `v0..v100,center,splitting,w1,w2,rho,snr,photons`.

use std::io::{Read, Write};
use std::path::Path;

use odmr_core::synth::LabeledSpectrum;
use odmr_core::INPUT_LENGTH;

use super::{put_f32s, Reader};
use crate::error::{format_err, Result};

pub const MAGIC: &[u8; 8] = b"ODMRSYN1";
const RECORD_FLOATS: usize = INPUT_LENGTH + 5 + 2;
const TARGET_NAMES: [&str; 5] = ["center", "splitting", "w1", "w2", "rho"];

/// One stored example. `input` holds the Z-scored spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub input: Vec<f32>,
    pub target: [f32; 5],
    pub snr: f32,
    pub photons: f32,
}

impl From<&LabeledSpectrum> for Record {
    fn from(l: &LabeledSpectrum) -> Self {
        Self {
            input: l.normalized.values.iter().map(|&v| v as f32).collect(),
            target: l.target().to_array().map(|v| v as f32),
            snr: l.snr as f32,
            photons: l.total_photons as f32,
        }
    }
}

impl Record {
    fn floats(&self) -> impl Iterator<Item = f32> + '_ {
        self.input.iter().copied().chain(self.target).chain([self.snr, self.photons])
    }

    fn from_floats(v: &[f32]) -> Self {
        let t = &v[INPUT_LENGTH..INPUT_LENGTH + 5];
        Self {
            input: v[..INPUT_LENGTH].to_vec(),
            target: [t[0], t[1], t[2], t[3], t[4]],
            snr: v[INPUT_LENGTH + 5],
            photons: v[INPUT_LENGTH + 6],
        }
    }
}

fn check_lengths(records: &[Record]) -> Result<()> {
    if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| r.input.len() != INPUT_LENGTH) {
        return Err(format_err(format!("record {i} has {} input values, expected {INPUT_LENGTH}", r.input.len())));
    }
    if u32::try_from(records.len()).is_err() {
        return Err(format_err("too many records for a u32 count"));
    }
    Ok(())
}

pub fn encode(records: &[Record]) -> Result<Vec<u8>> {
    check_lengths(records)?;
    let mut out = Vec::with_capacity(12 + records.len() * RECORD_FLOATS * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        put_f32s(&mut out, r.floats());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut r = Reader::new(bytes, "dataset");
    r.magic(MAGIC)?;
    let count = r.u32()? as usize;
    let need = count * RECORD_FLOATS * 4;
    if r.remaining() != need {
        return Err(format_err(format!(
            "dataset declares {count} records ({need} bytes) but {} bytes follow the header",
            r.remaining()
        )));
    }
    let floats = r.f32s(count * RECORD_FLOATS)?;
    r.finish()?;
    Ok(floats.chunks_exact(RECORD_FLOATS).map(Record::from_floats).collect())
}

pub fn save(records: &[Record], path: &Path) -> Result<()> {
    std::fs::write(path, encode(records)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Record>> {
    decode(&std::fs::read(path)?)
}

fn header() -> Vec<String> {
    (0..INPUT_LENGTH)
        .map(|i| format!("v{i}"))
        .chain(TARGET_NAMES.iter().map(|s| s.to_string()))
        .chain(["snr".into(), "photons".into()])
        .collect()
}

pub fn write_csv<W: Write>(records: &[Record], out: W) -> Result<()> {
    check_lengths(records)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header())?;
    for r in records {
        w.write_record(r.floats().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<Record>> {
    let mut rd = csv::Reader::from_reader(input);
    if rd.headers()?.iter().ne(header().iter().map(String::as_str)) {
        return Err(format_err("dataset CSV header does not match the expected columns"));
    }
    let mut out = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let v = rec
            .iter()
            .map(|f| f.trim().parse::<f32>())
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|e| format_err(format!("dataset CSV row {}: {e}", row + 1)))?;
        if v.len() != RECORD_FLOATS {
            return Err(format_err(format!("dataset CSV row {}: {} fields", row + 1, v.len())));
        }
        out.push(Record::from_floats(&v));
    }
    Ok(out)
}

pub fn save_csv(records: &[Record], path: &Path) -> Result<()> {
    write_csv(records, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_csv(path: &Path) -> Result<Vec<Record>> {
    read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use odmr_core::synth::{generate_batch, NoiseModel, PriorConfig};

    fn sample() -> Vec<Record> {
        generate_batch(3, 0, 4, &PriorConfig::default(), NoiseModel::Hybrid).unwrap().iter().map(Record::from).collect()
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let recs = sample();
        let bytes = encode(&recs).unwrap();
        assert_eq!(bytes.len(), 12 + 4 * RECORD_FLOATS * 4);
        assert_eq!(decode(&bytes).unwrap(), recs);
        let mut csv_bytes = Vec::new();
        write_csv(&recs, &mut csv_bytes).unwrap();
        let back = read_csv(&csv_bytes[..]).unwrap();
        assert_eq!(back, recs);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = encode(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode(&long).is_err());
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
