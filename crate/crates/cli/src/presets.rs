//! Named configurations bundled into the binary.

use crate::config::ConfigFile;
use crate::CliError;

pub const PRESETS: &[(&str, &str)] = &[
    ("fig1b", include_str!("../presets/fig1b.json")),
    ("fig1c", include_str!("../presets/fig1c.json")),
    ("fig1d", include_str!("../presets/fig1d.json")),
    ("fig3a", include_str!("../presets/fig3a.json")),
    ("fig3b", include_str!("../presets/fig3b.json")),
    ("fig3c", include_str!("../presets/fig3c.json")),
    ("fig4a", include_str!("../presets/fig4a.json")),
    ("fig4b", include_str!("../presets/fig4b.json")),
    ("fig4c", include_str!("../presets/fig4c.json")),
    ("s2", include_str!("../presets/s2.json")),
    ("s3", include_str!("../presets/s3.json")),
    ("s4", include_str!("../presets/s4.json")),
    ("histogram", include_str!("../presets/histogram.json")),
    ("verify", include_str!("../presets/verify.json")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn load(name: &str) -> Result<ConfigFile, CliError> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| CliError::Schema(format!("unknown preset {name:?}; known: {}", names().collect::<Vec<_>>().join(", "))))?;
    ConfigFile::parse(text, name)
}
