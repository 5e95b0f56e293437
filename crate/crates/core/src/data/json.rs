//! Canonical JSON output: every `f64` is written with 17 significant digits
//! so that files round-trip bit-exactly and re-serialize byte-identically.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter, Serializer};

use crate::error::Result;

/// Wraps a formatter and overrides only the float representation.
struct Exact<F>(F);

fn write_exact<W: ?Sized + Write>(writer: &mut W, value: f64) -> io::Result<()> {
    // Non-finite values never reach the formatter; serde_json writes `null`.
    write!(writer, "{value:.16e}")
}

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, writer: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.0.$name(writer $(, $arg)*)
            }
        )*
    };
}

impl<F: Formatter> Formatter for Exact<F> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write_exact(writer, value)
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write_exact(writer, f64::from(value))
    }

    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        end_object_key();
        begin_object_value();
        end_object_value();
    }
}

pub fn to_writer<W: Write, T: Serialize + ?Sized>(writer: W, value: &T, pretty: bool) -> Result<()> {
    if pretty {
        value.serialize(&mut Serializer::with_formatter(writer, Exact(PrettyFormatter::new())))?;
    } else {
        value.serialize(&mut Serializer::with_formatter(writer, Exact(CompactFormatter)))?;
    }
    Ok(())
}

pub fn to_string<T: Serialize + ?Sized>(value: &T, pretty: bool) -> Result<String> {
    let mut buf = Vec::new();
    to_writer(&mut buf, value, pretty)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_exactly() {
        let values = vec![0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0, -0.0, 1e308];
        let text = to_string(&values, false).unwrap();
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(to_string(&back, false).unwrap(), text);
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(to_string(&0.1, false).unwrap(), "1.0000000000000001e-1");
        assert_eq!(to_string(&1.0, false).unwrap(), "1.0000000000000000e0");
    }

    #[test]
    fn pretty_layout_is_kept() {
        let text = to_string(&serde_json::json!({"a": [1.5]}), true).unwrap();
        assert!(text.contains("\n  \"a\": [\n    1.5000000000000000e0\n  ]"), "{text}");
    }
}
