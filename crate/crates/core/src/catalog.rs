//! Example models shipped with the crate, by name.

use crate::dsl::{parse_model, DslError, Model};

const SOURCES: &[(&str, &str)] = &[
    ("acc", include_str!("../models/acc.hpmodel")),
    ("acc_brake", include_str!("../models/acc_brake.hpmodel")),
    ("crosswalk_enters", include_str!("../models/crosswalk_enters.hpmodel")),
    ("crosswalk_stays", include_str!("../models/crosswalk_stays.hpmodel")),
    ("example1", include_str!("../models/example1.hpmodel")),
    ("footnote", include_str!("../models/footnote.hpmodel")),
    ("gain", include_str!("../models/gain.hpmodel")),
    ("intersection", include_str!("../models/intersection.hpmodel")),
    ("robot", include_str!("../models/robot.hpmodel")),
    ("stopline", include_str!("../models/stopline.hpmodel")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    SOURCES.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    SOURCES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Parses a bundled model. Panics only if a shipped file is malformed,
/// which the tests below rule out.
pub fn load(name: &str) -> Option<Model> {
    source(name).map(|s| parse_model(s).unwrap_or_else(|e| panic!("bundled model `{name}`: {e}")))
}

pub fn try_load(name: &str) -> Option<Result<Model, DslError>> {
    source(name).map(parse_model)
}
