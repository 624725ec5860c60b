//! Deterministic serialization. Every float is printed as a fixed-width
//! scientific literal with 17 significant digits, which round-trips f64
//! exactly and makes identical data serialize to identical bytes.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::Formatter;

struct SciFormatter;

impl Formatter for SciFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.8e}")
    }
}

/// Serializes to a JSON string with the fixed float format. Non-finite
/// floats become null.
pub fn json_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut out = Vec::with_capacity(256);
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SciFormatter);
    value.serialize(&mut ser)?;
    // the formatter only writes valid UTF-8
    Ok(String::from_utf8(out).expect("json output is utf-8"))
}

/// Writes the fixed-format JSON for `value`, with a trailing newline.
pub fn write_json<W: Write, T: Serialize>(writer: &mut W, value: &T) -> io::Result<()> {
    let s = json_string(value).map_err(io::Error::other)?;
    writer.write_all(s.as_bytes())?;
    writer.write_all(b"\n")
}
