//! Machine-readable check reports and deterministic JSON output.
//!
//! Numbers are written with 17 significant digits, which round-trips every
//! `f64`. Infinities and NaN, which JSON lacks, are written as the strings
//! `"inf"`, `"-inf"` and `"nan"`.

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::dist::Assignment;

/// An `f64` that may be infinite, serialized as a number or a string tag.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct ExtReal(pub f64);

impl From<f64> for ExtReal {
    fn from(v: f64) -> Self {
        ExtReal(v)
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

struct ExtRealVisitor;

impl Visitor<'_> for ExtRealVisitor {
    type Value = ExtReal;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a number or one of \"-inf\", \"inf\"")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<ExtReal, E> {
        Ok(ExtReal(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<ExtReal, E> {
        Ok(ExtReal(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<ExtReal, E> {
        Ok(ExtReal(v as f64))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<ExtReal, E> {
        match v {
            "-inf" => Ok(ExtReal(f64::NEG_INFINITY)),
            "inf" => Ok(ExtReal(f64::INFINITY)),
            other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(ExtRealVisitor)
    }
}

/// Pretty-printing formatter with fixed-width float output.
pub struct ReportFormatter {
    inner: PrettyFormatter<'static>,
}

impl Default for ReportFormatter {
    fn default() -> Self {
        Self {
            inner: PrettyFormatter::new(),
        }
    }
}

impl Formatter for ReportFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Serializes `value` with [`ReportFormatter`], ending with a newline.
pub fn to_report_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ReportFormatter::default());
    value
        .serialize(&mut ser)
        .expect("report types serialize without error");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualEntry {
    pub key: Assignment,
    pub residual: ExtReal,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct SkipEntry {
    pub context: Assignment,
    pub reason: String,
}

/// One named check: residuals keyed by context or triple, sorted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub tolerance: ExtReal,
    pub max_residual: ExtReal,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Assignment>,
    pub residuals: Vec<ResidualEntry>,
    pub skipped: Vec<SkipEntry>,
}

impl CheckReport {
    /// Passes iff every residual is at most `tolerance`. Skips always carry a
    /// reason and do not fail the check.
    pub fn new(
        check: impl Into<String>,
        residuals: &BTreeMap<Assignment, f64>,
        tolerance: f64,
        mut skipped: Vec<SkipEntry>,
    ) -> Self {
        let mut max = 0.0f64;
        let mut witness = None;
        let mut pass = true;
        for (k, &r) in residuals {
            if r.is_nan() || r > tolerance {
                pass = false;
            }
            if r.is_nan() || r > max {
                max = r;
                witness = Some(k.clone());
                if r.is_nan() {
                    break;
                }
            }
        }
        skipped.sort();
        Self {
            check: check.into(),
            tolerance: ExtReal(tolerance),
            max_residual: ExtReal(max),
            pass,
            witness: if pass { None } else { witness },
            residuals: residuals
                .iter()
                .map(|(k, &r)| ResidualEntry {
                    key: k.clone(),
                    residual: ExtReal(r),
                })
                .collect(),
            skipped,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_use_seventeen_digits() {
        let s = to_report_json(&vec![
            ExtReal(0.1),
            ExtReal(f64::NEG_INFINITY),
            ExtReal(-2.0),
        ]);
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("\"-inf\""));
        assert!(s.contains("-2.0000000000000000e0"));
        let back: Vec<ExtReal> = serde_json::from_str(&s).unwrap();
        assert_eq!(back[0].0, 0.1);
        assert_eq!(back[1].0, f64::NEG_INFINITY);
    }

    #[test]
    fn ext_real_rejects_unknown_tags() {
        assert!(serde_json::from_str::<ExtReal>("\"minus infinity\"").is_err());
        assert_eq!(serde_json::from_str::<ExtReal>("3").unwrap().0, 3.0);
    }

    #[test]
    fn check_report_names_worst_key() {
        let a = |v: &str| Assignment::from_pairs([("X", v)]).unwrap();
        let mut r = BTreeMap::new();
        r.insert(a("0"), 1e-12);
        r.insert(a("1"), 1e-2);
        let rep = CheckReport::new("commute", &r, 1e-10, vec![]);
        assert!(!rep.pass);
        assert_eq!(rep.witness, Some(a("1")));
        assert_eq!(rep.max_residual.0, 1e-2);
        r.remove(&a("1"));
        let rep = CheckReport::new("commute", &r, 1e-10, vec![]);
        assert!(rep.pass && rep.witness.is_none());
    }
}
