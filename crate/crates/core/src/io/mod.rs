//! Text file formats. Reals are written with 9 significant digits and `nan`
//! marks a missing value; writing what was read reproduces the same bytes.

mod formats;

pub use formats::*;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed,
/// scientific notation outside `[1e-5, 1e9)`.
pub fn fmt_g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let sign = if negative { "-" } else { "" };
    if (-5..9).contains(&exp) {
        let s = if exp >= 0 {
            let split = (exp + 1) as usize;
            format!("{}.{}", &digits[..split], &digits[split..])
        } else {
            format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
        };
        let s = s.trim_end_matches('0').trim_end_matches('.');
        format!("{sign}{s}")
    } else {
        let m = format!("{}.{}", &digits[..1], &digits[1..]);
        let m = m.trim_end_matches('0').trim_end_matches('.');
        format!("{sign}{m}e{exp}")
    }
}

/// Parses a real written by [`fmt_g9`] (or any Rust float literal).
pub fn parse_f64(token: &str) -> Option<f64> {
    match token {
        "nan" | "NaN" => Some(f64::NAN),
        _ => token.parse().ok(),
    }
}

/// Space-joined [`fmt_g9`] values.
pub fn join_g9(values: &[f64]) -> String {
    values.iter().map(|v| fmt_g9(*v)).collect::<Vec<_>>().join(" ")
}

/// Non-blank, non-comment lines with their 1-based line numbers.
pub(crate) struct Lines<'a> {
    path: PathBuf,
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    pub(crate) fn new(path: &Path, text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Lines {
            path: path.to_path_buf(),
            inner: it.peekable(),
            last: 0,
        }
    }

    pub(crate) fn err(&self, message: impl Into<String>) -> Error {
        Error::parse(&self.path, self.last, message)
    }

    pub(crate) fn peek_key(&mut self) -> Option<&'a str> {
        self.inner.peek().and_then(|(_, l)| l.split_whitespace().next())
    }

    /// Next line split into tokens.
    pub(crate) fn next_tokens(&mut self) -> Option<Vec<&'a str>> {
        let (n, l) = self.inner.next()?;
        self.last = n;
        Some(l.split_whitespace().collect())
    }

    /// Next line, which must start with `key`; returns the remaining tokens.
    pub(crate) fn expect(&mut self, key: &str) -> Result<Vec<&'a str>> {
        match self.next_tokens() {
            Some(t) if t.first() == Some(&key) => Ok(t[1..].to_vec()),
            Some(t) => Err(self.err(format!("expected '{key}', found '{}'", t.join(" ")))),
            None => Err(Error::parse(
                &self.path,
                self.last,
                format!("expected '{key}', found end of file"),
            )),
        }
    }

    pub(crate) fn f64(&self, token: &str) -> Result<f64> {
        parse_f64(token).ok_or_else(|| self.err(format!("invalid number '{token}'")))
    }

    pub(crate) fn int<T: std::str::FromStr>(&self, token: &str) -> Result<T> {
        token
            .parse()
            .map_err(|_| self.err(format!("invalid integer '{token}'")))
    }

    pub(crate) fn reals(&self, tokens: &[&str]) -> Result<Vec<f64>> {
        tokens.iter().map(|t| self.f64(t)).collect()
    }

    pub(crate) fn count(&self, tokens: &[&str], n: usize) -> Result<()> {
        if tokens.len() != n {
            return Err(self.err(format!("expected {n} fields, found {}", tokens.len())));
        }
        Ok(())
    }

    pub(crate) fn done(&mut self) -> Result<()> {
        match self.next_tokens() {
            None => Ok(()),
            Some(t) => Err(self.err(format!("unexpected line '{}'", t.join(" ")))),
        }
    }
}

/// `key=value` lookup in a header line.
pub(crate) fn header_value<'a>(tokens: &[&'a str], key: &str) -> Option<&'a str> {
    tokens
        .iter()
        .find_map(|t| t.split_once('=').filter(|(k, _)| *k == key).map(|(_, v)| v))
}

pub(crate) fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn g9_examples() {
        assert_eq!(fmt_g9(0.0), "0");
        assert_eq!(fmt_g9(1.0), "1");
        assert_eq!(fmt_g9(-2.5), "-2.5");
        assert_eq!(fmt_g9(0.1), "0.1");
        assert_eq!(fmt_g9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_g9(123456789.0), "123456789");
        assert_eq!(fmt_g9(1234567890.0), "1.23456789e9");
        assert_eq!(fmt_g9(0.00001234), "0.00001234");
        assert_eq!(fmt_g9(0.000001234), "1.234e-6");
        assert_eq!(fmt_g9(f64::NAN), "nan");
        assert_eq!(fmt_g9(f64::INFINITY), "inf");
        assert_eq!(fmt_g9(0.0965), "0.0965");
    }

    proptest! {
        #[test]
        fn g9_round_trip_is_stable(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let s = fmt_g9(x);
            let y = parse_f64(&s).unwrap();
            prop_assert_eq!(fmt_g9(y), s.clone());
            prop_assert!((x - y).abs() <= x.abs() * 1e-8);
            prop_assert_eq!(parse_f64(&fmt_g9(y)).unwrap().to_bits(), y.to_bits());
        }
    }
}
