//! Measurement records and their CSV forms.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A contiguous range of logical rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub start_row: u32,
    pub row_count: u32,
}

impl Region {
    pub const fn new(start_row: u32, row_count: u32) -> Self {
        Self { start_row, row_count }
    }

    pub fn end(&self) -> u64 {
        u64::from(self.start_row) + u64::from(self.row_count)
    }

    pub fn rows(&self) -> std::ops::Range<u32> {
        self.start_row..self.start_row + self.row_count
    }

    pub fn check(&self, rows: u32) -> Result<()> {
        if self.row_count == 0 {
            return Err(Error::domain("empty region"));
        }
        if self.end() > u64::from(rows) {
            return Err(Error::domain(format!(
                "region [{}, {}) exceeds the module's {rows} rows",
                self.start_row,
                self.end()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlipRecord {
    pub row: u32,
    pub bit: u32,
    pub temp: i32,
    pub rep: u32,
}

/// Flips per row observed over one region in one repetition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerSample {
    pub region: Region,
    pub temp: i32,
    pub rep: u32,
    pub flips_per_row: f64,
}

impl BerSample {
    pub fn total_flips(&self) -> f64 {
        self.flips_per_row * f64::from(self.region.row_count)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BerRow {
    module_id: u32,
    start_row: u32,
    row_count: u32,
    temp_c: i32,
    rep: u32,
    flips_per_row: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FlipRow {
    module_id: u32,
    row: u32,
    bit: u32,
    temp_c: i32,
    rep: u32,
}

/// Writes `module_id,start_row,row_count,temp_c,rep,flips_per_row`.
pub fn write_ber_csv<W: Write>(w: W, module_id: u32, samples: &[BerSample]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for s in samples {
        wr.serialize(BerRow {
            module_id,
            start_row: s.region.start_row,
            row_count: s.region.row_count,
            temp_c: s.temp,
            rep: s.rep,
            flips_per_row: s.flips_per_row,
        })?;
    }
    if samples.is_empty() {
        wr.write_record(["module_id", "start_row", "row_count", "temp_c", "rep", "flips_per_row"])?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a BER sample CSV; returns `(module_id, sample)` pairs.
pub fn read_ber_csv<R: Read>(r: R) -> Result<Vec<(u32, BerSample)>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize::<BerRow>()
        .map(|row| {
            let row = row?;
            Ok((
                row.module_id,
                BerSample {
                    region: Region::new(row.start_row, row.row_count),
                    temp: row.temp_c,
                    rep: row.rep,
                    flips_per_row: row.flips_per_row,
                },
            ))
        })
        .collect()
}

/// Writes `module_id,row,bit,temp_c,rep`.
pub fn write_flip_csv<W: Write>(w: W, module_id: u32, flips: &[FlipRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for f in flips {
        wr.serialize(FlipRow { module_id, row: f.row, bit: f.bit, temp_c: f.temp, rep: f.rep })?;
    }
    if flips.is_empty() {
        wr.write_record(["module_id", "row", "bit", "temp_c", "rep"])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_flip_csv<R: Read>(r: R) -> Result<Vec<(u32, FlipRecord)>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize::<FlipRow>()
        .map(|row| {
            let row = row?;
            Ok((row.module_id, FlipRecord { row: row.row, bit: row.bit, temp: row.temp_c, rep: row.rep }))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ber_csv_header_and_values() {
        let s = BerSample { region: Region::new(0, 512), temp: 70, rep: 3, flips_per_row: 1.25 };
        let mut buf = Vec::new();
        write_ber_csv(&mut buf, 4, &[s]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "module_id,start_row,row_count,temp_c,rep,flips_per_row\n4,0,512,70,3,1.25\n");
        assert_eq!(read_ber_csv(&buf[..]).unwrap(), vec![(4, s)]);
    }

    #[test]
    fn flip_csv_header() {
        let f = FlipRecord { row: 10, bit: 7, temp: 55, rep: 0 };
        let mut buf = Vec::new();
        write_flip_csv(&mut buf, 1, &[f]).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "module_id,row,bit,temp_c,rep\n1,10,7,55,0\n");
        assert_eq!(read_flip_csv(&buf[..]).unwrap(), vec![(1, f)]);
        let mut empty = Vec::new();
        write_flip_csv(&mut empty, 1, &[]).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), "module_id,row,bit,temp_c,rep\n");
    }

    #[test]
    fn region_checks() {
        assert!(Region::new(0, 0).check(10).is_err());
        assert!(Region::new(5, 6).check(10).is_err());
        assert!(Region::new(5, 5).check(10).is_ok());
    }
}
