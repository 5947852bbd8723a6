//! Physical dimensions of configuration values and the unit suffixes
//! accepted for each. Everything is converted to SI on input.

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dimension {
    Dimensionless,
    Length,
    Area,
    Time,
    Rate,
    Velocity,
    Pressure,
    Viscosity,
    Density,
    Concentration,
    Diffusivity,
    Acceleration,
    Angle,
}

impl Dimension {
    /// Accepted suffixes with their factor to SI. The first entry is the
    /// SI unit itself.
    pub fn units(self) -> &'static [(&'static str, f64)] {
        match self {
            Dimension::Dimensionless => &[("", 1.0)],
            Dimension::Length => &[("m", 1.0), ("cm", 1e-2), ("mm", 1e-3), ("in", 0.0254)],
            Dimension::Area => &[
                ("m2", 1.0),
                ("mD", 9.869233e-16),
                ("D", 9.869233e-13),
                ("cm2", 1e-4),
            ],
            Dimension::Time => &[("s", 1.0), ("min", 60.0), ("h", 3600.0), ("d", 86400.0)],
            Dimension::Rate => &[("1/s", 1.0), ("1/h", 1.0 / 3600.0), ("1/d", 1.0 / 86400.0)],
            Dimension::Velocity => &[("m/s", 1.0), ("cm/s", 1e-2), ("m/d", 1.0 / 86400.0)],
            Dimension::Pressure => &[
                ("Pa", 1.0),
                ("kPa", 1e3),
                ("MPa", 1e6),
                ("bar", 1e5),
                ("N/m2", 1.0),
            ],
            Dimension::Viscosity => &[("Pa.s", 1.0), ("cP", 1e-3), ("mPa.s", 1e-3)],
            Dimension::Density => &[("kg/m3", 1.0), ("g/cm3", 1e3)],
            Dimension::Concentration => &[("kg/m3", 1.0), ("mg/L", 1e-3), ("g/L", 1.0)],
            Dimension::Diffusivity => &[("m2/s", 1.0), ("cm2/s", 1e-4)],
            Dimension::Acceleration => &[("m/s2", 1.0)],
            Dimension::Angle => &[("rad", 1.0), ("deg", std::f64::consts::PI / 180.0)],
        }
    }

    pub fn si_unit(self) -> &'static str {
        self.units()[0].0
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Dimension::Dimensionless => "dimensionless",
            Dimension::Length => "length",
            Dimension::Area => "area",
            Dimension::Time => "time",
            Dimension::Rate => "rate",
            Dimension::Velocity => "velocity",
            Dimension::Pressure => "pressure",
            Dimension::Viscosity => "viscosity",
            Dimension::Density => "density",
            Dimension::Concentration => "concentration",
            Dimension::Diffusivity => "diffusivity",
            Dimension::Acceleration => "acceleration",
            Dimension::Angle => "angle",
        };
        f.write_str(name)
    }
}

/// Why a quantity could not be read.
#[derive(Clone, Debug, PartialEq)]
pub enum QuantityError {
    /// The numeric part is malformed; carries the byte offset of the
    /// offending text.
    Number(usize),
    /// The suffix is a known unit of another dimension.
    WrongDimension {
        unit: String,
        found: Dimension,
    },
    UnknownUnit(String),
}

/// Every dimension, in declaration order.
pub const ALL_DIMENSIONS: [Dimension; 13] = [
    Dimension::Dimensionless,
    Dimension::Length,
    Dimension::Area,
    Dimension::Time,
    Dimension::Rate,
    Dimension::Velocity,
    Dimension::Pressure,
    Dimension::Viscosity,
    Dimension::Density,
    Dimension::Concentration,
    Dimension::Diffusivity,
    Dimension::Acceleration,
    Dimension::Angle,
];

/// Parses `"<number> [unit]"` and converts it to SI.
pub fn parse_quantity(text: &str, dim: Dimension) -> Result<f64, QuantityError> {
    let trimmed = text.trim();
    let lead = text.len() - text.trim_start().len();
    let split = trimmed.find(char::is_whitespace).unwrap_or(trimmed.len());
    let (num, unit) = (&trimmed[..split], trimmed[split..].trim());
    let value: f64 = num.parse().map_err(|_| QuantityError::Number(lead))?;
    if !value.is_finite() {
        return Err(QuantityError::Number(lead));
    }
    if unit.is_empty() {
        return Ok(value);
    }
    if let Some((_, factor)) = dim.units().iter().find(|(u, _)| *u == unit) {
        let si = value * factor;
        return if si.is_finite() {
            Ok(si)
        } else {
            Err(QuantityError::Number(lead))
        };
    }
    match ALL_DIMENSIONS
        .iter()
        .find(|d| d.units().iter().any(|(u, _)| !u.is_empty() && *u == unit))
    {
        Some(found) => Err(QuantityError::WrongDimension {
            unit: unit.to_string(),
            found: *found,
        }),
        None => Err(QuantityError::UnknownUnit(unit.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn centipoise_is_a_millipascal_second() {
        assert_relative_eq!(parse_quantity("1 cP", Dimension::Viscosity).unwrap(), 1e-3);
    }

    #[test]
    fn bare_numbers_are_si() {
        assert_eq!(
            parse_quantity("1.51e-13", Dimension::Area).unwrap(),
            1.51e-13
        );
    }

    #[test]
    fn human_units_convert() {
        assert_eq!(parse_quantity("68 h", Dimension::Time).unwrap(), 244_800.0);
        assert_eq!(parse_quantity("2 d", Dimension::Time).unwrap(), 172_800.0);
        assert_relative_eq!(
            parse_quantity("4.32 mg/L", Dimension::Concentration).unwrap(),
            4.32e-3
        );
        assert_relative_eq!(
            parse_quantity("2.17e-4 cm/s", Dimension::Velocity).unwrap(),
            2.17e-6
        );
        assert_relative_eq!(
            parse_quantity("151 mD", Dimension::Area).unwrap(),
            1.4902e-13,
            max_relative = 1e-4
        );
        assert_relative_eq!(
            parse_quantity("0.01 MPa", Dimension::Pressure).unwrap(),
            1e4
        );
    }

    #[test]
    fn overflowing_conversion_is_rejected() {
        assert_eq!(
            parse_quantity("1e308 d", Dimension::Time),
            Err(QuantityError::Number(0))
        );
    }

    #[test]
    fn dimension_mismatch_names_the_unit() {
        match parse_quantity("3 h", Dimension::Viscosity) {
            Err(QuantityError::WrongDimension { unit, found }) => {
                assert_eq!(unit, "h");
                assert_eq!(found, Dimension::Time);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn garbage_is_rejected() {
        assert_eq!(
            parse_quantity("  abc", Dimension::Length),
            Err(QuantityError::Number(2))
        );
        assert_eq!(
            parse_quantity("inf", Dimension::Length),
            Err(QuantityError::Number(0))
        );
        assert!(matches!(
            parse_quantity("1 furlong", Dimension::Length),
            Err(QuantityError::UnknownUnit(_))
        ));
    }

    proptest! {
        #[test]
        fn si_values_round_trip(v in -1e30f64..1e30) {
            let text = format!("{v:e}");
            prop_assert_eq!(parse_quantity(&text, Dimension::Pressure).unwrap(), v);
        }
    }
}
