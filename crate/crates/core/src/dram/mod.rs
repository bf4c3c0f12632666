//! Module profiles, row mappings and calibrated cell populations.

mod cell;
mod mapping;
mod module;
mod profile;

pub use cell::{CellCoord, CellKind, CellProfile};
pub use mapping::{map_logical_to_physical, map_physical_to_logical, MappingKind, RowMapping};
pub use module::{
    auto_band_cells_per_row, build_module, RowStats, SimulatedModule, AUTO_SCALE_CEILING,
    BAND_WIDTH_MAX, BAND_WIDTH_MIN, PROB_LEVELS,
};
pub use profile::{
    expected_ber, BerCubic, Manufacturer, ModuleProfile, TempDomain, PROFILE_VERSION,
};

#[cfg(test)]
pub(crate) use module::tests::small_profile;
