//! Exact hexadecimal floating-point text (`0x1.8p+1`, `-0x1.999999999999ap-4`).
//!
//! Formatting emits the canonical form: a leading `1` for normal numbers,
//! `0` for subnormals and zero, trailing zero nibbles dropped. Parsing
//! accepts exactly that form, so every finite `f64` round-trips bit for bit.

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const MANT_BITS: u32 = 52;
const MANT_MASK: u64 = (1 << MANT_BITS) - 1;

pub fn format_hex(x: f64) -> String {
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_field = ((bits >> MANT_BITS) & 0x7ff) as i32;
    let mant = bits & MANT_MASK;
    assert!(exp_field != 0x7ff, "non-finite value {x} has no hex-float form");
    let (lead, exp) = match (exp_field, mant) {
        (0, 0) => return format!("{sign}0x0p+0"),
        (0, _) => (0, -1022),
        (e, _) => (1, e - 1023),
    };
    let digits = format!("{mant:013x}");
    let frac = digits.trim_end_matches('0');
    if frac.is_empty() {
        format!("{sign}0x{lead}p{exp:+}")
    } else {
        format!("{sign}0x{lead}.{frac}p{exp:+}")
    }
}

pub fn parse_hex(s: &str) -> Result<f64> {
    let bad = |why: &str| Error::Parse(format!("bad hex float `{s}`: {why}"));
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let body = body.strip_prefix("0x").ok_or_else(|| bad("missing 0x"))?;
    let (mantissa, exp) = body.split_once('p').ok_or_else(|| bad("missing exponent"))?;
    let exp: i32 = exp.parse().map_err(|_| bad("exponent"))?;
    let (lead, frac) = match mantissa.split_once('.') {
        Some((l, f)) if !f.is_empty() => (l, f),
        Some(_) => return Err(bad("empty fraction")),
        None => (mantissa, ""),
    };
    if frac.len() > 13 || !frac.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(bad("fraction"));
    }
    let mant = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(frac, 16).map_err(|_| bad("fraction"))? << (4 * (13 - frac.len()))
    };
    let exp_field: u64 = match lead {
        "1" if (-1022..=1023).contains(&exp) => (exp + 1023) as u64,
        "0" if mant == 0 && exp == 0 => 0,
        "0" if exp == -1022 => 0,
        _ => return Err(bad("not canonical")),
    };
    let bits = (u64::from(neg) << 63) | (exp_field << MANT_BITS) | mant;
    Ok(f64::from_bits(bits))
}

/// `f64` that (de)serializes as a hex-float string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HexF64(pub f64);

impl Serialize for HexF64 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_hex(self.0))
    }
}

impl<'de> Deserialize<'de> for HexF64 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_hex(&s).map(HexF64).map_err(de::Error::custom)
    }
}

pub fn to_hex_vec(xs: &[f64]) -> Vec<HexF64> {
    xs.iter().copied().map(HexF64).collect()
}

pub fn from_hex_vec(xs: &[HexF64]) -> Vec<f64> {
    xs.iter().map(|h| h.0).collect()
}
