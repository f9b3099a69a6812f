//! Hex rendering used in reports and reproducer scripts: two-digit lowercase
//! hex, space separated, 16 bytes per line.

use std::fmt::Write;

pub fn hexdump(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 3);
    for (i, line) in bytes.chunks(16).enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (j, b) in line.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{b:02x}");
        }
    }
    out
}

/// Parses whitespace-separated two-digit hex bytes (any line layout).
pub fn parse_hex(text: &str) -> Result<Vec<u8>, String> {
    text.split_whitespace()
        .map(|tok| {
            if tok.len() != 2 {
                return Err(format!("bad hex byte `{tok}`"));
            }
            u8::from_str_radix(tok, 16).map_err(|_| format!("bad hex byte `{tok}`"))
        })
        .collect()
}
