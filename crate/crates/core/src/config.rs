//! Physical configuration of the five-segment transmission beam.
//!
//! The beam occupies `(0, ell)` and is clamped at both ends. The material
//! switches from elastic to Kelvin–Voigt viscoelastic on `(ell0, ell1)`. A
//! transverse damper sits at `xi1` in the first elastic part and a
//! transverse plus rotational damper pair at `xi2` inside the viscous part.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Keys accepted (and, except for `kv_global`, required) in a config file.
pub const CONFIG_KEYS: [&str; 13] = [
    "ell", "ell0", "ell1", "xi1", "xi2", "rho1", "rho2", "alpha1", "alpha2", "alpha0", "gamma1",
    "gamma2", "gamma3",
];

/// Optional key switching the viscous coefficient on along the whole beam.
pub const GLOBAL_KV_KEY: &str = "kv_global";

const INTERFACE_TOL: f64 = 1e-12;

/// Raw `key = value` assignments before validation.
pub type RawConfig = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub ell: f64,
    pub ell0: f64,
    pub ell1: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    /// Kelvin–Voigt viscosity on the whole beam instead of `(ell0, ell1)` only.
    #[serde(default)]
    pub viscous_everywhere: bool,
}

/// One invariant broken by a raw configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigViolation {
    OrderingViolation { detail: String },
    NonPositiveCoefficient { key: &'static str, value: f64 },
    PointOnInterface { key: &'static str, value: f64, interface: f64 },
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::OrderingViolation { detail } => write!(f, "OrderingViolation: {detail}"),
            Self::NonPositiveCoefficient { key, value } => {
                write!(f, "NonPositiveCoefficient: {key} = {value} must be > 0")
            }
            Self::PointOnInterface { key, value, interface } => {
                write!(f, "PointOnInterface: {key} = {value} coincides with {interface}")
            }
        }
    }
}

/// A maximal interval of `(0, ell)` with constant coefficients and no damper inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: f64,
    pub b: f64,
    pub rho: f64,
    pub alpha: f64,
    pub kappa: f64,
}

impl Segment {
    pub fn len(&self) -> f64 {
        self.b - self.a
    }

    pub fn contains(&self, x: f64) -> bool {
        self.a < x && x < self.b
    }

    /// Effective bending coefficient `alpha + lambda * kappa` for the time factor `e^{lambda t}`.
    pub fn moment_coefficient(&self, lambda: num_complex::Complex64) -> num_complex::Complex64 {
        self.alpha + lambda * self.kappa
    }
}

impl BeamConfig {
    /// Reference instance used by the acceptance suite and the CLI defaults.
    pub fn reference() -> Self {
        Self {
            ell: 1.0,
            ell0: 0.4,
            ell1: 0.7,
            xi1: 0.2,
            xi2: 0.55,
            rho1: 1.0,
            rho2: 1.0,
            alpha1: 1.0,
            alpha2: 1.0,
            alpha0: 0.1,
            gamma1: 0.5,
            gamma2: 0.5,
            gamma3: 0.5,
            viscous_everywhere: false,
        }
    }

    /// Reference geometry with every dissipation mechanism switched off.
    pub fn conservative() -> Self {
        Self { alpha0: 0.0, gamma1: 0.0, gamma2: 0.0, gamma3: 0.0, ..Self::reference() }
    }

    /// Reference geometry with Kelvin–Voigt damping along the whole beam and no point dampers.
    pub fn globally_viscous() -> Self {
        Self {
            gamma1: 0.0,
            gamma2: 0.0,
            gamma3: 0.0,
            viscous_everywhere: true,
            ..Self::reference()
        }
    }

    /// Same geometry and coefficients with every dissipation mechanism removed.
    pub fn undamped(&self) -> Self {
        Self { alpha0: 0.0, gamma1: 0.0, gamma2: 0.0, gamma3: 0.0, ..*self }
    }

    /// `rho` and `alpha` agree on the two halves of the beam.
    pub fn has_uniform_coefficients(&self) -> bool {
        self.rho1 == self.rho2 && self.alpha1 == self.alpha2
    }

    /// True when no dissipation mechanism is active.
    pub fn is_conservative(&self) -> bool {
        self.alpha0 == 0.0 && self.gamma1 == 0.0 && self.gamma2 == 0.0 && self.gamma3 == 0.0
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::InvalidArgument(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        validate_config(&parse_config_text(&text)?)
    }

    pub fn to_raw(&self) -> RawConfig {
        let mut raw: RawConfig = CONFIG_KEYS
            .iter()
            .zip(self.values())
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        if self.viscous_everywhere {
            raw.insert(GLOBAL_KV_KEY.to_string(), 1.0);
        }
        raw
    }

    /// Serializes to the `key = value` file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in CONFIG_KEYS.iter().zip(self.values()) {
            out.push_str(&format!("{k} = {}\n", crate::format::fmt_g17(v)));
        }
        if self.viscous_everywhere {
            out.push_str(&format!("{GLOBAL_KV_KEY} = 1\n"));
        }
        out
    }

    fn values(&self) -> [f64; 13] {
        [
            self.ell, self.ell0, self.ell1, self.xi1, self.xi2, self.rho1, self.rho2, self.alpha1,
            self.alpha2, self.alpha0, self.gamma1, self.gamma2, self.gamma3,
        ]
    }

    /// Coefficients `(rho, alpha, kappa)` at an abscissa off the material interfaces.
    pub fn coeff_at(&self, x: f64) -> Result<(f64, f64, f64)> {
        if !(0.0..=self.ell).contains(&x) {
            return Err(Error::InvalidArgument(format!("x = {x} outside [0, {}]", self.ell)));
        }
        let tol = INTERFACE_TOL * self.ell;
        for interface in [self.ell0, self.ell1] {
            if (x - interface).abs() <= tol {
                return Err(Error::OnDiscontinuity { x, interface });
            }
        }
        let kv_global = if self.viscous_everywhere { self.alpha0 } else { 0.0 };
        if self.ell0 < x && x < self.ell1 {
            Ok((self.rho2, self.alpha2, self.alpha0))
        } else {
            Ok((self.rho1, self.alpha1, kv_global))
        }
    }

    /// The five segments `(0,xi1), (xi1,ell0), (ell0,xi2), (xi2,ell1), (ell1,ell)`.
    pub fn segments(&self) -> [Segment; 5] {
        let cuts = self.breakpoints();
        std::array::from_fn(|i| {
            let (a, b) = (cuts[i], cuts[i + 1]);
            let (rho, alpha, kappa) =
                self.coeff_at(0.5 * (a + b)).expect("segment midpoints avoid the interfaces");
            Segment { a, b, rho, alpha, kappa }
        })
    }

    /// `[0, xi1, ell0, xi2, ell1, ell]`.
    pub fn breakpoints(&self) -> [f64; 6] {
        [0.0, self.xi1, self.ell0, self.xi2, self.ell1, self.ell]
    }
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self::reference()
    }
}

/// Parses the flat `key = value` format. `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<RawConfig> {
    let mut raw = RawConfig::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("expected `key = value`, found `{content}`"),
        })?;
        let key = key.trim();
        if !CONFIG_KEYS.contains(&key) && key != GLOBAL_KV_KEY {
            return Err(Error::Parse { line: line_no, message: format!("unknown key `{key}`") });
        }
        let value: f64 = value.trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("`{}` is not a number", value.trim()),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse { line: line_no, message: format!("`{key}` is not finite") });
        }
        if raw.insert(key.to_string(), value).is_some() {
            return Err(Error::Parse { line: line_no, message: format!("duplicate key `{key}`") });
        }
    }
    Ok(raw)
}

/// Checks every invariant and reports all violations at once.
///
/// The damping coefficients `alpha0, gamma1, gamma2, gamma3` must be strictly
/// positive, except that all four may be exactly zero together (the
/// conservative limit). With `kv_global = 1` the point-damper gains may be zero.
pub fn validate_config(raw: &RawConfig) -> Result<BeamConfig> {
    for key in CONFIG_KEYS {
        if !raw.contains_key(key) {
            return Err(Error::MissingKey(key.to_string()));
        }
    }
    let get = |k: &str| raw[k];
    let viscous_everywhere = match raw.get(GLOBAL_KV_KEY) {
        None => false,
        Some(v) if *v == 0.0 => false,
        Some(v) if *v == 1.0 => true,
        Some(v) => {
            return Err(Error::Parse {
                line: 0,
                message: format!("`{GLOBAL_KV_KEY}` must be 0 or 1, got {v}"),
            })
        }
    };
    let cfg = BeamConfig {
        ell: get("ell"),
        ell0: get("ell0"),
        ell1: get("ell1"),
        xi1: get("xi1"),
        xi2: get("xi2"),
        rho1: get("rho1"),
        rho2: get("rho2"),
        alpha1: get("alpha1"),
        alpha2: get("alpha2"),
        alpha0: get("alpha0"),
        gamma1: get("gamma1"),
        gamma2: get("gamma2"),
        gamma3: get("gamma3"),
        viscous_everywhere,
    };

    let mut violations = Vec::new();
    let tol = INTERFACE_TOL * cfg.ell.abs().max(f64::MIN_POSITIVE);
    for (key, value) in [("xi1", cfg.xi1), ("xi2", cfg.xi2)] {
        for interface in [0.0, cfg.ell0, cfg.ell1, cfg.ell] {
            if (value - interface).abs() <= tol {
                violations.push(ConfigViolation::PointOnInterface { key, value, interface });
            }
        }
    }
    let order = [
        ("0", 0.0),
        ("xi1", cfg.xi1),
        ("ell0", cfg.ell0),
        ("xi2", cfg.xi2),
        ("ell1", cfg.ell1),
        ("ell", cfg.ell),
    ];
    for pair in order.windows(2) {
        let ((ka, a), (kb, b)) = (pair[0], pair[1]);
        if !(a < b) {
            let on_interface = violations.iter().any(|v| {
                matches!(v, ConfigViolation::PointOnInterface { value, interface, .. }
                    if (*value == a && *interface == b) || (*value == b && *interface == a))
            });
            if !on_interface {
                violations.push(ConfigViolation::OrderingViolation {
                    detail: format!("{ka} = {a} must be < {kb} = {b}"),
                });
            }
        }
    }

    let material = [
        ("rho1", cfg.rho1),
        ("rho2", cfg.rho2),
        ("alpha1", cfg.alpha1),
        ("alpha2", cfg.alpha2),
    ];
    for (key, value) in material {
        if !(value > 0.0) {
            violations.push(ConfigViolation::NonPositiveCoefficient { key, value });
        }
    }
    let damping = [
        ("alpha0", cfg.alpha0),
        ("gamma1", cfg.gamma1),
        ("gamma2", cfg.gamma2),
        ("gamma3", cfg.gamma3),
    ];
    let conservative = damping.iter().all(|(_, v)| *v == 0.0);
    if !conservative {
        for (key, value) in damping {
            let zero_allowed = viscous_everywhere && key != "alpha0";
            if value < 0.0 || (value == 0.0 && !zero_allowed) || value.is_nan() {
                violations.push(ConfigViolation::NonPositiveCoefficient { key, value });
            }
        }
    }

    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::InvalidConfig(violations))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_raw() -> RawConfig {
        let mut raw = BeamConfig::reference().to_raw();
        for key in ["alpha0", "gamma1", "gamma2", "gamma3"] {
            raw.insert(key.into(), 1.0);
        }
        raw
    }

    fn violations(raw: &RawConfig) -> Vec<ConfigViolation> {
        match validate_config(raw) {
            Err(Error::InvalidConfig(v)) => v,
            other => panic!("expected InvalidConfig, got {other:?}"),
        }
    }

    #[test]
    fn unit_coefficients_validate() {
        let cfg = validate_config(&unit_raw()).unwrap();
        assert_eq!(cfg.gamma3, 1.0);
        assert!(!cfg.is_conservative());
    }

    #[test]
    fn xi1_beyond_ell0_is_an_ordering_violation() {
        let mut raw = unit_raw();
        raw.insert("xi1".into(), 0.5);
        let v = violations(&raw);
        assert!(v.iter().any(|x| matches!(x, ConfigViolation::OrderingViolation { .. })));
    }

    #[test]
    fn zero_gamma_is_rejected() {
        let mut raw = unit_raw();
        raw.insert("gamma1".into(), 0.0);
        let v = violations(&raw);
        assert_eq!(v, vec![ConfigViolation::NonPositiveCoefficient { key: "gamma1", value: 0.0 }]);
    }

    #[test]
    fn all_violations_are_listed() {
        let mut raw = unit_raw();
        raw.insert("gamma1".into(), 0.0);
        raw.insert("alpha2".into(), -1.0);
        raw.insert("xi2".into(), 0.9);
        let v = violations(&raw);
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn damper_on_interface_is_reported() {
        let mut raw = unit_raw();
        raw.insert("xi2".into(), 0.7);
        let v = violations(&raw);
        assert!(v.iter().any(|x| matches!(
            x,
            ConfigViolation::PointOnInterface { key: "xi2", interface, .. } if *interface == 0.7
        )));
        assert!(!v.iter().any(|x| matches!(x, ConfigViolation::OrderingViolation { .. })));
    }

    #[test]
    fn conservative_limit_is_accepted() {
        let cfg = validate_config(&BeamConfig::conservative().to_raw()).unwrap();
        assert!(cfg.is_conservative());
    }

    #[test]
    fn missing_key_is_named() {
        let mut raw = unit_raw();
        raw.remove("gamma3");
        match validate_config(&raw) {
            Err(Error::MissingKey(k)) => assert_eq!(k, "gamma3"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn coefficients_by_region() {
        let cfg = BeamConfig { alpha2: 2.0, rho2: 3.0, ..BeamConfig::reference() };
        assert_eq!(cfg.coeff_at(0.1).unwrap(), (1.0, 1.0, 0.0));
        assert_eq!(cfg.coeff_at(0.55).unwrap(), (3.0, 2.0, 0.1));
        assert_eq!(cfg.coeff_at(0.9).unwrap(), (1.0, 1.0, 0.0));
        assert!(matches!(cfg.coeff_at(0.4), Err(Error::OnDiscontinuity { .. })));
        assert!(matches!(cfg.coeff_at(0.7), Err(Error::OnDiscontinuity { .. })));
    }

    #[test]
    fn five_segments() {
        let segs = BeamConfig::reference().segments();
        let ends: Vec<_> = segs.iter().map(|s| (s.a, s.b)).collect();
        assert_eq!(ends, vec![(0.0, 0.2), (0.2, 0.4), (0.4, 0.55), (0.55, 0.7), (0.7, 1.0)]);
        let kappas: Vec<_> = segs.iter().map(|s| s.kappa).collect();
        assert_eq!(kappas, vec![0.0, 0.0, 0.1, 0.1, 0.0]);
    }

    #[test]
    fn text_round_trip() {
        let cfg = BeamConfig::globally_viscous();
        let back = validate_config(&parse_config_text(&cfg.to_text()).unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn parser_handles_comments_and_notation() {
        let text = "# header\nell = 1e0 # trailing\n\nell0=4.0E-1\n";
        let raw = parse_config_text(text).unwrap();
        assert_eq!(raw["ell"], 1.0);
        assert_eq!(raw["ell0"], 0.4);
        assert!(parse_config_text("foo = 1").is_err());
        assert!(parse_config_text("ell 1").is_err());
        assert!(parse_config_text("ell = x").is_err());
    }
}
