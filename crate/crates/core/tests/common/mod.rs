use spyhammer::dram::{BerCubic, ModuleProfile, RowMapping};

/// A shipped profile shrunk to `rows` rows, keeping its curve and manufacturer traits.
#[allow(dead_code)]
pub fn shrunk(id: u32, rows: u32) -> ModuleProfile {
    let mut p = ModuleProfile::builtin(id).unwrap();
    p.rows = rows;
    p.mapping = RowMapping::new(p.mapping.kind, RowMapping::width_for_rows(rows));
    p
}

/// A small module with a steep, monotone curve.
#[allow(dead_code)]
pub fn steep(rows: u32) -> ModuleProfile {
    let mut p = shrunk(7, rows);
    p.ber_cubic = BerCubic::new(0.0, 0.0, 0.5, 10.0);
    p
}
