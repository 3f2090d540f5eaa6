//! The three worked example models, compiled into the library.

use crate::model::config::parse_model;
use crate::model::SwitchingModel;
use crate::Scalar;

pub const ONOFF_CFG: &str = include_str!("../configs/onoff.cfg");
pub const FED_CFG: &str = include_str!("../configs/fed.cfg");
pub const CALLCENTER_CFG: &str = include_str!("../configs/callcenter.cfg");

/// Name and source text of every bundled model.
pub const ALL: [(&str, &str); 3] = [("onoff", ONOFF_CFG), ("fed", FED_CFG), ("callcenter", CALLCENTER_CFG)];

/// Two-state on-off tracking, simple Poisson observations, no discounting.
pub fn onoff<T: Scalar>() -> SwitchingModel<T> {
    parse_model(ONOFF_CFG).expect("bundled onoff model is valid")
}

/// Three-state, three-policy monetary policy example.
pub fn fed<T: Scalar>() -> SwitchingModel<T> {
    parse_model(FED_CFG).expect("bundled fed model is valid")
}

/// Call center staffing: marked arrivals, arrival costs, discount 0.5.
pub fn callcenter<T: Scalar>() -> SwitchingModel<T> {
    parse_model(CALLCENTER_CFG).expect("bundled callcenter model is valid")
}

/// Looks up a bundled model by name.
pub fn by_name<T: Scalar>(name: &str) -> Option<SwitchingModel<T>> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, src)| parse_model(src).expect("bundled model is valid"))
}
