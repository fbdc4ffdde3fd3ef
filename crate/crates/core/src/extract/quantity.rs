//! Exact decimal values and the scale-label grammar.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Largest number of significant digits a label value may carry.
const MAX_DIGITS: usize = 18;

/// Non-negative decimal stored as `mantissa * 10^-scale`, normalized so the
/// mantissa has no trailing zeros (and zero has scale 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Decimal {
    mantissa: u64,
    scale: u32,
}

impl Decimal {
    pub const ZERO: Decimal = Decimal { mantissa: 0, scale: 0 };

    pub fn new(mantissa: u64, scale: u32) -> Self {
        let (mut mantissa, mut scale) = (mantissa, scale);
        if mantissa == 0 {
            return Self::ZERO;
        }
        while scale > 0 && mantissa % 10 == 0 {
            mantissa /= 10;
            scale -= 1;
        }
        Self { mantissa, scale }
    }

    pub fn from_integer(value: u64) -> Self {
        Self::new(value, 0)
    }

    pub fn mantissa(&self) -> u64 {
        self.mantissa
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa == 0
    }

    /// Correctly rounded `self * 10^exponent` as a binary float.
    pub fn to_f64_scaled(&self, exponent: i32) -> f64 {
        format!("{}e{}", self.mantissa, exponent - self.scale as i32)
            .parse()
            .expect("formatted decimal is a valid float literal")
    }

    pub fn to_f64(&self) -> f64 {
        self.to_f64_scaled(0)
    }

    /// Exact conversion from a float that was itself produced from a short
    /// decimal (the JSON path). Uses the shortest round-trip representation.
    pub fn from_f64(value: f64) -> Option<Self> {
        if !value.is_finite() || value < 0.0 {
            return None;
        }
        format!("{value}").parse().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid decimal {0:?}")]
pub struct DecimalParseError(pub String);

impl FromStr for Decimal {
    type Err = DecimalParseError;

    /// Accepts `digits` or `digits.digits`; no sign, exponent or bare point.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || DecimalParseError(s.to_string());
        let (int_part, frac_part) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int_part.is_empty()
            || !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
            || (s.contains('.') && frac_part.is_empty())
        {
            return Err(err());
        }
        let int_trimmed = int_part.trim_start_matches('0');
        let frac_trimmed = frac_part.trim_end_matches('0');
        if int_trimmed.len() + frac_trimmed.len() > MAX_DIGITS {
            return Err(err());
        }
        let digits = format!("{int_trimmed}{frac_trimmed}");
        let mantissa = if digits.is_empty() { 0 } else { digits.parse::<u64>().map_err(|_| err())? };
        Ok(Decimal::new(mantissa, frac_trimmed.len() as u32))
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scale == 0 {
            return write!(f, "{}", self.mantissa);
        }
        let digits = format!("{:0>width$}", self.mantissa, width = self.scale as usize + 1);
        let split = digits.len() - self.scale as usize;
        write!(f, "{}.{}", &digits[..split], &digits[split..])
    }
}

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Decimal::from_f64(v).ok_or_else(|| serde::de::Error::custom(format!("not a decimal value: {v}")))
    }
}

/// Length units that appear on micrograph scale bars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnitKind {
    #[serde(rename = "cm")]
    Centimeter,
    #[serde(rename = "mm")]
    Millimeter,
    #[serde(rename = "µm", alias = "um", alias = "\u{03bc}m")]
    Micrometer,
    #[serde(rename = "nm")]
    Nanometer,
    #[serde(rename = "pm")]
    Picometer,
}

impl UnitKind {
    pub const ALL: [UnitKind; 5] = [
        UnitKind::Centimeter,
        UnitKind::Millimeter,
        UnitKind::Micrometer,
        UnitKind::Nanometer,
        UnitKind::Picometer,
    ];

    /// Power of ten of one unit in meters.
    pub fn exponent(&self) -> i32 {
        match self {
            UnitKind::Centimeter => -2,
            UnitKind::Millimeter => -3,
            UnitKind::Micrometer => -6,
            UnitKind::Nanometer => -9,
            UnitKind::Picometer => -12,
        }
    }

    pub fn meters_per_unit(&self) -> f64 {
        10f64.powi(self.exponent())
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            UnitKind::Centimeter => "cm",
            UnitKind::Millimeter => "mm",
            UnitKind::Micrometer => "µm",
            UnitKind::Nanometer => "nm",
            UnitKind::Picometer => "pm",
        }
    }

    /// Matches a unit token exactly. `um` and the Greek-mu spelling both
    /// map to micrometers; tokens are case-sensitive.
    pub fn from_token(token: &str) -> Option<UnitKind> {
        match token {
            "cm" => Some(UnitKind::Centimeter),
            "mm" => Some(UnitKind::Millimeter),
            "µm" | "um" | "\u{03bc}m" => Some(UnitKind::Micrometer),
            "nm" => Some(UnitKind::Nanometer),
            "pm" => Some(UnitKind::Picometer),
            _ => None,
        }
    }
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for UnitKind {
    type Err = ScaleTextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UnitKind::from_token(s).ok_or_else(|| ScaleTextError::new(s, ScaleTextRule::UnknownUnit))
    }
}

/// A positive length read off a scale label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalQuantity {
    pub value: Decimal,
    pub unit: UnitKind,
    pub meters: f64,
}

impl PhysicalQuantity {
    pub fn new(value: Decimal, unit: UnitKind) -> Result<Self, ScaleTextError> {
        if value.is_zero() {
            return Err(ScaleTextError::new(&format!("{value} {unit}"), ScaleTextRule::NonPositive));
        }
        Ok(Self {
            value,
            unit,
            meters: value.to_f64_scaled(unit.exponent()),
        })
    }

    /// `<value> <unit>` with the canonical unit symbol.
    pub fn canonical_text(&self) -> String {
        format!("{} {}", self.value, self.unit)
    }

    /// Same value and unit; `meters` follows from them.
    pub fn same_reading(&self, other: &PhysicalQuantity) -> bool {
        self.value == other.value && self.unit == other.unit
    }
}

/// Which part of the label grammar a string violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleTextRule {
    Empty,
    MissingNumber,
    MalformedNumber,
    NonPositive,
    MissingUnit,
    UnknownUnit,
    WordBoundary,
    ExtraWhitespace,
}

impl ScaleTextRule {
    pub fn describe(&self) -> &'static str {
        match self {
            ScaleTextRule::Empty => "text is empty",
            ScaleTextRule::MissingNumber => "text must start with a number",
            ScaleTextRule::MalformedNumber => "number must be digits with an optional decimal fraction",
            ScaleTextRule::NonPositive => "value must be positive",
            ScaleTextRule::MissingUnit => "a unit must follow the number",
            ScaleTextRule::UnknownUnit => "unit must be one of cm, mm, µm (um), nm, pm",
            ScaleTextRule::WordBoundary => "unit token is part of a longer word",
            ScaleTextRule::ExtraWhitespace => "at most one space may separate number and unit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid scale text {text:?}: {}", rule.describe())]
pub struct ScaleTextError {
    pub text: String,
    pub rule: ScaleTextRule,
}

impl ScaleTextError {
    pub fn new(text: &str, rule: ScaleTextRule) -> Self {
        Self { text: text.to_string(), rule }
    }
}

/// Parses `<decimal><optional single space><unit>` into a quantity.
///
/// Surrounding whitespace is ignored. The unit token must end the string and
/// must not touch another letter on either side, so `"5 umbrella"` and
/// `"summary"` are rejected while `"5um"` reads as five micrometers.
pub fn parse_scale_text(s: &str) -> Result<PhysicalQuantity, ScaleTextError> {
    let text = s.trim();
    let fail = |rule| Err(ScaleTextError::new(s, rule));
    if text.is_empty() {
        return fail(ScaleTextRule::Empty);
    }
    let number_end = text
        .char_indices()
        .find(|&(_, c)| !(c.is_ascii_digit() || c == '.'))
        .map_or(text.len(), |(i, _)| i);
    let (number, rest) = text.split_at(number_end);
    if number.is_empty() {
        return fail(ScaleTextRule::MissingNumber);
    }
    let Ok(value) = number.parse::<Decimal>() else {
        return fail(ScaleTextRule::MalformedNumber);
    };
    let unit_text = match rest.strip_prefix(' ') {
        Some(after) => after,
        None => rest,
    };
    if unit_text.starts_with(char::is_whitespace) {
        return fail(ScaleTextRule::ExtraWhitespace);
    }
    if unit_text.is_empty() {
        return fail(ScaleTextRule::MissingUnit);
    }
    if !rest.starts_with(' ') && !unit_text.starts_with(char::is_alphabetic) {
        // e.g. "5-mm", "5,mm"
        return fail(ScaleTextRule::UnknownUnit);
    }
    // The unit token is the leading run of letters; anything after it must
    // not be a letter (that would break the word boundary) and, since the
    // token ends the label, must not exist at all.
    let token_end = unit_text
        .char_indices()
        .find(|&(_, c)| !c.is_alphabetic())
        .map_or(unit_text.len(), |(i, _)| i);
    let token = &unit_text[..token_end];
    let unit = match UnitKind::from_token(token) {
        Some(u) => u,
        None => {
            let embeds_unit = ["cm", "mm", "µm", "um", "\u{03bc}m", "nm", "pm"]
                .iter()
                .any(|u| token.starts_with(u) || token.contains(u));
            return fail(if embeds_unit { ScaleTextRule::WordBoundary } else { ScaleTextRule::UnknownUnit });
        }
    };
    if token_end != unit_text.len() {
        return fail(ScaleTextRule::WordBoundary);
    }
    PhysicalQuantity::new(value, unit).map_err(|_| ScaleTextError::new(s, ScaleTextRule::NonPositive))
}

/// True exactly when [`parse_scale_text`] succeeds.
pub fn validate_scale_text(s: &str) -> bool {
    parse_scale_text(s).is_ok()
}

/// Canonical `<value> <unit>` form of a label, or `None` if it is not one.
pub fn normalize_scale_text(s: &str) -> Option<String> {
    parse_scale_text(s).ok().map(|q| q.canonical_text())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dec(s: &str) -> Decimal {
        s.parse().unwrap()
    }

    #[test]
    fn decimal_normalizes_and_displays() {
        assert_eq!(dec("5.50"), dec("5.5"));
        assert_eq!(dec("005").to_string(), "5");
        assert_eq!(dec("0.05").to_string(), "0.05");
        assert_eq!(dec("0.000").to_string(), "0");
        assert_eq!(dec("12.25").to_string(), "12.25");
        for bad in ["", ".", ".5", "5.", "1e3", "-1", "1.2.3", "1234567890123456789"] {
            assert!(bad.parse::<Decimal>().is_err(), "{bad}");
        }
    }

    #[test]
    fn decimal_float_round_trip() {
        for s in ["0.1", "0.5", "2.5", "100", "0.001", "123.456"] {
            let d = dec(s);
            assert_eq!(Decimal::from_f64(d.to_f64()), Some(d));
        }
    }

    #[test]
    fn label_examples() {
        assert!(validate_scale_text("10 cm"));
        assert!(!validate_scale_text("summary"));
        assert!(validate_scale_text("5um"));
        assert!(!validate_scale_text("common"));
    }

    #[test]
    fn parse_examples() {
        let q = parse_scale_text("500 mm").unwrap();
        assert_eq!((q.value, q.unit, q.meters), (dec("500"), UnitKind::Millimeter, 0.5));
        let q = parse_scale_text("5um").unwrap();
        assert_eq!(q.unit, UnitKind::Micrometer);
        assert_eq!(q.meters, 5e-6);
        assert_eq!(q.canonical_text(), "5 µm");
        let err = parse_scale_text("0 cm").unwrap_err();
        assert_eq!(err.rule, ScaleTextRule::NonPositive);
        assert!(err.to_string().contains("positive"));
    }

    #[test]
    fn rule_reporting() {
        let rule = |s: &str| parse_scale_text(s).unwrap_err().rule;
        assert_eq!(rule("   "), ScaleTextRule::Empty);
        assert_eq!(rule("fig. 3"), ScaleTextRule::MissingNumber);
        assert_eq!(rule("1.2.3 mm"), ScaleTextRule::MalformedNumber);
        assert_eq!(rule("5"), ScaleTextRule::MissingUnit);
        assert_eq!(rule("5 xm"), ScaleTextRule::UnknownUnit);
        assert_eq!(rule("5 umbrella"), ScaleTextRule::WordBoundary);
        assert_eq!(rule("3 mmol"), ScaleTextRule::WordBoundary);
        assert_eq!(rule("5  mm"), ScaleTextRule::ExtraWhitespace);
        assert_eq!(rule("5 mm2"), ScaleTextRule::WordBoundary);
        assert_eq!(rule("5 Mm"), ScaleTextRule::UnknownUnit);
    }

    #[test]
    fn greek_mu_and_micro_sign_agree() {
        let a = parse_scale_text("2 \u{03bc}m").unwrap();
        let b = parse_scale_text("2 µm").unwrap();
        assert!(a.same_reading(&b));
    }

    #[test]
    fn unit_serde_names() {
        assert_eq!(serde_json::to_string(&UnitKind::Micrometer).unwrap(), "\"µm\"");
        let u: UnitKind = serde_json::from_str("\"um\"").unwrap();
        assert_eq!(u, UnitKind::Micrometer);
    }
}
