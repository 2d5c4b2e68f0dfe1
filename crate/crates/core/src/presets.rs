//! Bundled scenario presets and the validation suite.

macro_rules! bundle {
    ($($name:literal => $path:literal),* $(,)?) => {
        &[$(($name, include_str!($path))),*]
    };
}

/// Scenario presets by name.
pub const PRESETS: &[(&str, &str)] = bundle! {
    "normal-default" => "../presets/normal-default.toml",
    "lowpower-default" => "../presets/lowpower-default.toml",
    "vlp-default" => "../presets/vlp-default.toml",
    "vlp-nbvlc" => "../presets/vlp-nbvlc.toml",
    "normal-cyclic" => "../presets/normal-cyclic.toml",
    "lowpower-cyclic" => "../presets/lowpower-cyclic.toml",
    "val-01-normal" => "../data/validation/v1/val-01-normal.toml",
    "val-02-normal" => "../data/validation/v1/val-02-normal.toml",
    "val-03-normal" => "../data/validation/v1/val-03-normal.toml",
    "val-04-normal" => "../data/validation/v1/val-04-normal.toml",
    "val-05-lowpower" => "../data/validation/v1/val-05-lowpower.toml",
    "val-06-lowpower" => "../data/validation/v1/val-06-lowpower.toml",
    "val-07-lowpower" => "../data/validation/v1/val-07-lowpower.toml",
    "val-08-lowpower" => "../data/validation/v1/val-08-lowpower.toml",
    "val-09-vlp" => "../data/validation/v1/val-09-vlp.toml",
    "val-10-vlp" => "../data/validation/v1/val-10-vlp.toml",
    "val-11-vlp" => "../data/validation/v1/val-11-vlp.toml",
};

/// The four default-parameter presets.
pub const DEFAULT_PRESETS: [&str; 4] = ["normal-default", "lowpower-default", "vlp-default", "vlp-nbvlc"];

/// Names of the bundled validation cases, in suite order.
pub const VALIDATION_CASES: [&str; 11] = [
    "val-01-normal",
    "val-02-normal",
    "val-03-normal",
    "val-04-normal",
    "val-05-lowpower",
    "val-06-lowpower",
    "val-07-lowpower",
    "val-08-lowpower",
    "val-09-vlp",
    "val-10-vlp",
    "val-11-vlp",
];

/// Source text of a preset. Accepts `name`, `name.toml` and
/// `presets/name` spellings.
pub fn preset_source(name: &str) -> Option<&'static str> {
    let n = name.strip_prefix("presets/").unwrap_or(name);
    let n = n.strip_suffix(".toml").unwrap_or(n);
    PRESETS.iter().find(|(k, _)| *k == n).map(|(_, src)| *src)
}

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(k, _)| *k)
}
