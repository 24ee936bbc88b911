//! IESNA LM-63 photometric files and the per-plane sample vectors the
//! optimizers consume.
//!
//! Only the subset needed for symmetric LED lenses is supported: `TILT=NONE`,
//! any number of C-planes, and the candela multiplier. Photometric type and
//! units are carried through but not interpreted.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ParseError, SampleError};

/// Highest polar angle (degrees) kept by [`extract_plane`].
pub const LOWER_HEMISPHERE_MAX: u32 = 90;

/// Sample count of the standard lower-hemisphere form, 0..=90 degrees.
pub const STANDARD_SAMPLES: usize = LOWER_HEMISPHERE_MAX as usize + 1;

/// The numeric block following the TILT line.
#[derive(Debug, Clone, PartialEq)]
pub struct LampBlock {
    pub lamps: f64,
    pub lumens_per_lamp: f64,
    pub candela_multiplier: f64,
    pub photometric_type: f64,
    pub units_type: f64,
    pub width: f64,
    pub length: f64,
    pub height: f64,
    pub ballast_factor: f64,
    pub file_generation: f64,
    pub input_watts: f64,
}

impl Default for LampBlock {
    fn default() -> Self {
        Self {
            lamps: 1.0,
            lumens_per_lamp: -1.0,
            candela_multiplier: 1.0,
            photometric_type: 1.0,
            units_type: 2.0,
            width: 0.0,
            length: 0.0,
            height: 0.0,
            ballast_factor: 1.0,
            file_generation: 1.0,
            input_watts: 0.0,
        }
    }
}

/// A parsed photometric file. `candela_grid[plane][polar]` holds candela
/// with the multiplier already applied.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotometricFile {
    pub c_plane_angles: Vec<f64>,
    pub polar_angles: Vec<f64>,
    pub candela_grid: Vec<Vec<f64>>,
    /// Header lines preceding `TILT=`, verbatim.
    pub metadata: Vec<String>,
    pub lamp: LampBlock,
}

impl PhotometricFile {
    /// Total number of (plane, polar) vectors.
    pub fn vector_count(&self) -> usize {
        self.candela_grid.iter().map(Vec::len).sum()
    }

    pub fn plane_count(&self) -> usize {
        self.c_plane_angles.len()
    }

    /// Serializes back to LM-63 text with a unit multiplier.
    pub fn to_ies(&self, format: NumberFormat) -> String {
        let mut out = String::new();
        for line in &self.metadata {
            out.push_str(line);
            out.push('\n');
        }
        if self.metadata.is_empty() {
            out.push_str("IESNA:LM-63-2002\n");
        }
        out.push_str("TILT=NONE\n");
        let l = &self.lamp;
        let _ = writeln!(
            out,
            "{} {} 1 {} {} {} {} {} {} {}",
            l.lamps,
            l.lumens_per_lamp,
            self.polar_angles.len(),
            self.c_plane_angles.len(),
            l.photometric_type,
            l.units_type,
            l.width,
            l.length,
            l.height
        );
        let _ = writeln!(out, "{} {} {}", l.ballast_factor, l.file_generation, l.input_watts);
        write_wrapped(&mut out, &self.polar_angles, NumberFormat::Full);
        write_wrapped(&mut out, &self.c_plane_angles, NumberFormat::Full);
        for row in &self.candela_grid {
            write_wrapped(&mut out, row, format);
        }
        out
    }
}

/// How candela values are printed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NumberFormat {
    /// Shortest representation that parses back to the identical `f64`.
    #[default]
    Full,
    /// Fixed number of decimal places, as most photometric tools emit.
    Decimals(usize),
}

impl NumberFormat {
    fn render(self, v: f64) -> String {
        match self {
            NumberFormat::Full => format!("{v}"),
            NumberFormat::Decimals(d) => format!("{v:.d$}"),
        }
    }
}

fn write_wrapped(out: &mut String, values: &[f64], format: NumberFormat) {
    for chunk in values.chunks(10) {
        let line: Vec<String> = chunk.iter().map(|&v| format.render(v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

/// Whitespace- or comma-separated numbers with the line each came from.
struct Tokens<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    pending: std::vec::IntoIter<&'a str>,
    line: usize,
}

impl<'a> Tokens<'a> {
    fn next_token(&mut self) -> Option<(usize, &'a str)> {
        loop {
            if let Some(tok) = self.pending.next() {
                return Some((self.line, tok));
            }
            let (idx, text) = self.lines.next()?;
            self.line = idx + 1;
            self.pending = text
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .collect::<Vec<_>>()
                .into_iter();
        }
    }

    fn number(&mut self, what: &'static str) -> Result<f64, ParseError> {
        let (line, tok) = self.next_token().ok_or_else(|| ParseError::Malformed {
            line: self.line,
            message: format!("unexpected end of file while reading {what}"),
        })?;
        tok.parse::<f64>().map_err(|_| ParseError::Malformed {
            line,
            message: format!("invalid number `{tok}` in {what}"),
        })
    }

    fn count(&mut self, what: &'static str) -> Result<usize, ParseError> {
        let line_before = self.line;
        let v = self.number(what)?;
        if v < 1.0 || v.fract() != 0.0 {
            return Err(ParseError::Malformed {
                line: self.line.max(line_before),
                message: format!("{what} must be a positive integer, found {v}"),
            });
        }
        Ok(v as usize)
    }

    fn list(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>, ParseError> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            match self.next_token() {
                Some((line, tok)) => out.push(tok.parse::<f64>().map_err(|_| ParseError::Malformed {
                    line,
                    message: format!("invalid number `{tok}` in {what}"),
                })?),
                None => {
                    return Err(ParseError::CountMismatch {
                        line: self.line,
                        what,
                        expected: n,
                        found: out.len(),
                    })
                }
            }
        }
        Ok(out)
    }
}

/// Parses LM-63 text.
pub fn parse_ies(text: &str) -> Result<PhotometricFile, ParseError> {
    let mut lines = text.lines().enumerate().peekable();
    let mut metadata = Vec::new();
    let tilt_line;
    loop {
        let Some((idx, line)) = lines.next() else {
            return Err(ParseError::MissingTilt);
        };
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix("TILT=") {
            if !rest.trim().eq_ignore_ascii_case("NONE") {
                return Err(ParseError::UnsupportedTilt(rest.trim().to_string()));
            }
            tilt_line = idx + 1;
            break;
        }
        metadata.push(line.trim_end().to_string());
    }

    let mut tokens = Tokens {
        lines,
        pending: Vec::new().into_iter(),
        line: tilt_line,
    };
    let lamps = tokens.number("lamp count")?;
    let lumens_per_lamp = tokens.number("lumens per lamp")?;
    let candela_multiplier = tokens.number("candela multiplier")?;
    let n_vertical = tokens.count("vertical angle count")?;
    let n_horizontal = tokens.count("horizontal angle count")?;
    let photometric_type = tokens.number("photometric type")?;
    let units_type = tokens.number("units type")?;
    let width = tokens.number("luminous width")?;
    let length = tokens.number("luminous length")?;
    let height = tokens.number("luminous height")?;
    let ballast_factor = tokens.number("ballast factor")?;
    let file_generation = tokens.number("file generation type")?;
    let input_watts = tokens.number("input watts")?;

    let polar_angles = tokens.list(n_vertical, "vertical angles")?;
    if let Some(w) = polar_angles.windows(2).find(|w| w[1] <= w[0]) {
        return Err(ParseError::Malformed {
            line: tokens.line,
            message: format!("vertical angles not strictly increasing at {}", w[1]),
        });
    }
    let c_plane_angles = tokens.list(n_horizontal, "horizontal angles")?;

    let total = n_vertical * n_horizontal;
    let mut candela_grid = Vec::with_capacity(n_horizontal);
    let mut found = 0;
    for _ in 0..n_horizontal {
        let mut row = Vec::with_capacity(n_vertical);
        for _ in 0..n_vertical {
            let (line, tok) = tokens.next_token().ok_or(ParseError::CountMismatch {
                line: tokens.line,
                what: "candela values",
                expected: total,
                found,
            })?;
            let value: f64 = tok.parse().map_err(|_| ParseError::Malformed {
                line,
                message: format!("invalid candela value `{tok}`"),
            })?;
            if value < 0.0 || !value.is_finite() {
                return Err(ParseError::NegativeCandela { line, value });
            }
            row.push(value * candela_multiplier);
            found += 1;
        }
        candela_grid.push(row);
    }

    let mut extra = 0;
    let mut extra_line = tokens.line;
    while let Some((line, _)) = tokens.next_token() {
        extra += 1;
        extra_line = line;
    }
    if extra > 0 {
        return Err(ParseError::CountMismatch {
            line: extra_line,
            what: "candela values",
            expected: total,
            found: total + extra,
        });
    }

    Ok(PhotometricFile {
        c_plane_angles,
        polar_angles,
        candela_grid,
        metadata,
        lamp: LampBlock {
            lamps,
            lumens_per_lamp,
            candela_multiplier,
            photometric_type,
            units_type,
            width,
            length,
            height,
            ballast_factor,
            file_generation,
            input_watts,
        },
    })
}

pub fn read_ies<R: Read>(mut reader: R) -> std::io::Result<Result<PhotometricFile, ParseError>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    Ok(parse_ies(&text))
}

/// Measured intensity against polar angle for a single C-plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensitySamples {
    phi: Vec<f64>,
    candela: Vec<f64>,
    i_max: f64,
}

impl IntensitySamples {
    /// Builds a sample set from `(phi_degrees, candela)` pairs.
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self, SampleError> {
        if samples.is_empty() {
            return Err(SampleError::Empty);
        }
        let mut phi = Vec::with_capacity(samples.len());
        let mut candela = Vec::with_capacity(samples.len());
        for (p, v) in samples {
            if !p.is_finite() || phi.last().is_some_and(|&last| p <= last) {
                return Err(SampleError::NotIncreasing(p));
            }
            if !(v.is_finite() && v >= 0.0) {
                return Err(SampleError::InvalidCandela { phi: p, value: v });
            }
            phi.push(p);
            candela.push(v);
        }
        let i_max = candela.iter().copied().fold(0.0, f64::max);
        Ok(Self { phi, candela, i_max })
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn i_max(&self) -> f64 {
        self.i_max
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn candela(&self) -> &[f64] {
        &self.candela
    }

    pub fn total_candela(&self) -> f64 {
        self.candela.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.phi.iter().copied().zip(self.candela.iter().copied())
    }
}

fn integer_degree_index(angles: &[f64], degree: u32) -> Option<usize> {
    let target = degree as f64;
    angles.iter().position(|&a| (a - target).abs() <= 1e-9)
}

fn lower_hemisphere_indices(file: &PhotometricFile) -> Result<Vec<usize>, SampleError> {
    let mut indices = Vec::with_capacity(STANDARD_SAMPLES);
    let mut missing = Vec::new();
    for degree in 0..=LOWER_HEMISPHERE_MAX {
        match integer_degree_index(&file.polar_angles, degree) {
            Some(i) => indices.push(i),
            None => missing.push(degree),
        }
    }
    if missing.is_empty() {
        Ok(indices)
    } else {
        Err(SampleError::MissingAngles(missing))
    }
}

/// The 91 integer-degree samples, 0..=90, of one C-plane.
pub fn extract_plane(file: &PhotometricFile, plane_index: usize) -> Result<IntensitySamples, SampleError> {
    let row = file.candela_grid.get(plane_index).ok_or(SampleError::PlaneOutOfRange {
        index: plane_index,
        planes: file.plane_count(),
    })?;
    let indices = lower_hemisphere_indices(file)?;
    IntensitySamples::new(
        indices
            .iter()
            .enumerate()
            .map(|(deg, &i)| (deg as f64, row[i]))
            .collect(),
    )
}

/// Like [`extract_plane`] but averages candela over every C-plane.
pub fn extract_averaged(file: &PhotometricFile) -> Result<IntensitySamples, SampleError> {
    if file.candela_grid.is_empty() {
        return Err(SampleError::PlaneOutOfRange { index: 0, planes: 0 });
    }
    let indices = lower_hemisphere_indices(file)?;
    let planes = file.candela_grid.len() as f64;
    IntensitySamples::new(
        indices
            .iter()
            .enumerate()
            .map(|(deg, &i)| {
                let sum: f64 = file.candela_grid.iter().map(|row| row[i]).sum();
                (deg as f64, sum / planes)
            })
            .collect(),
    )
}

/// Emits a single-plane LM-63 file whose polar grid runs to 180 degrees.
/// Angles past the last sample are integer degrees with zero candela.
pub fn write_ies(samples: &IntensitySamples, format: NumberFormat, metadata: &[String]) -> String {
    let mut polar_angles = samples.phi.clone();
    let mut candela = samples.candela.clone();
    let last = polar_angles.last().copied().unwrap_or(-1.0);
    let mut next = last.floor() as i64 + 1;
    while next <= 180 {
        polar_angles.push(next as f64);
        candela.push(0.0);
        next += 1;
    }
    let mut header = vec!["IESNA:LM-63-2002".to_string()];
    header.extend(metadata.iter().cloned());
    PhotometricFile {
        c_plane_angles: vec![0.0],
        polar_angles,
        candela_grid: vec![candela],
        metadata: header,
        lamp: LampBlock::default(),
    }
    .to_ies(format)
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    phi_deg: f64,
    candela: f64,
}

/// Writes samples as CSV with columns `phi_deg,candela`.
pub fn write_samples_csv<W: Write>(samples: &IntensitySamples, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (phi_deg, candela) in samples.iter() {
        w.serialize(SampleRow { phi_deg, candela })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum CsvSamplesError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Samples(#[from] SampleError),
}

pub fn read_samples_csv<R: Read>(reader: R) -> Result<IntensitySamples, CsvSamplesError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let rows: Vec<SampleRow> = r.deserialize().collect::<Result<_, _>>()?;
    Ok(IntensitySamples::new(
        rows.into_iter().map(|r| (r.phi_deg, r.candela)).collect(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_plane_file() -> String {
        let mut s = String::from("IESNA:LM-63-2002\n[TEST] synthetic\n[MANUFAC] test\nTILT=NONE\n");
        s.push_str("1 -1 1 181 4 1 2 0 0 0\n1 1 1.5\n");
        let polar: Vec<String> = (0..=180).map(|d| d.to_string()).collect();
        s.push_str(&polar.join(" "));
        s.push_str("\n0 90 180 270\n");
        for plane in 0..4 {
            let row: Vec<String> = (0..=180)
                .map(|d| {
                    if d <= 90 {
                        format!("{}", 500.0 - 5.0 * d as f64 + plane as f64)
                    } else {
                        "0".into()
                    }
                })
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    #[test]
    fn four_planes_at_one_degree() {
        let f = parse_ies(&four_plane_file()).unwrap();
        assert_eq!(f.plane_count(), 4);
        assert_eq!(f.polar_angles.len(), 181);
        assert_eq!(f.vector_count(), 724);
        assert_eq!(f.metadata.len(), 3);
        let s = extract_plane(&f, 0).unwrap();
        assert_eq!(s.len(), STANDARD_SAMPLES);
        assert_eq!(s.i_max(), 500.0);
        assert_eq!(s.phi()[0], 0.0);
        assert!(s.phi().iter().all(|&p| p <= 90.0));
    }

    #[test]
    fn quarter_sphere_four_planes_yield_720_vectors() {
        // 180 polar angles at 1 degree (0..=179) on four planes.
        let mut s = String::from("TILT=NONE\n1 -1 1 180 4 1 2 0 0 0\n1 1 0\n");
        s.push_str(&(0..180).map(|d| d.to_string()).collect::<Vec<_>>().join(" "));
        s.push_str("\n0 90 180 270\n");
        for _ in 0..4 {
            s.push_str(&vec!["1"; 180].join(" "));
            s.push('\n');
        }
        assert_eq!(parse_ies(&s).unwrap().vector_count(), 720);
    }

    #[test]
    fn minimal_file() {
        let f = parse_ies("TILT=NONE\n1 -1 1 1 1 1 2 0 0 0\n1 1 0\n0\n0\n100\n").unwrap();
        assert_eq!(f.candela_grid, vec![vec![100.0]]);
    }

    #[test]
    fn multiplier_is_applied() {
        let f = parse_ies("TILT=NONE\n1 -1 2.5 2 1 1 2 0 0 0\n1 1 0\n0 1\n0\n4 8\n").unwrap();
        assert_eq!(f.candela_grid, vec![vec![10.0, 20.0]]);
    }

    #[test]
    fn upper_hemisphere_is_dropped() {
        let mut text = String::from("TILT=NONE\n1 -1 1 181 1 1 2 0 0 0\n1 1 0\n");
        text.push_str(&(0..=180).map(|d| d.to_string()).collect::<Vec<_>>().join(" "));
        text.push_str("\n0\n");
        let mut row = vec!["0".to_string(); 181];
        row[0] = "500".into();
        for v in row.iter_mut().skip(91) {
            *v = "999".into();
        }
        text.push_str(&row.join(" "));
        let s = extract_plane(&parse_ies(&text).unwrap(), 0).unwrap();
        assert_eq!(s.i_max(), 500.0);
        assert!(!s.candela().contains(&999.0));
    }

    #[test]
    fn count_mismatch_and_negative_values() {
        let short = "TILT=NONE\n1 -1 1 3 1 1 2 0 0 0\n1 1 0\n0 1 2\n0\n5 6\n";
        assert!(matches!(
            parse_ies(short),
            Err(ParseError::CountMismatch { line: 6, .. })
        ));
        let long = "TILT=NONE\n1 -1 1 2 1 1 2 0 0 0\n1 1 0\n0 1\n0\n5 6\n7\n";
        assert!(matches!(
            parse_ies(long),
            Err(ParseError::CountMismatch { line: 7, .. })
        ));
        let negative = "TILT=NONE\n1 -1 1 2 1 1 2 0 0 0\n1 1 0\n0 1\n0\n5 -6\n";
        assert!(matches!(
            parse_ies(negative),
            Err(ParseError::NegativeCandela { line: 6, .. })
        ));
        let garbage = "TILT=NONE\n1 -1 x 2 1 1 2 0 0 0\n";
        assert!(matches!(parse_ies(garbage), Err(ParseError::Malformed { line: 2, .. })));
        assert!(matches!(parse_ies("IESNA\n"), Err(ParseError::MissingTilt)));
        assert!(matches!(
            parse_ies("TILT=INCLUDE\n"),
            Err(ParseError::UnsupportedTilt(_))
        ));
    }

    #[test]
    fn missing_angles_are_listed() {
        let f = parse_ies("TILT=NONE\n1 -1 1 3 1 1 2 0 0 0\n1 1 0\n0 1 5\n0\n1 2 3\n").unwrap();
        match extract_plane(&f, 0) {
            Err(SampleError::MissingAngles(m)) => {
                assert_eq!(m.len(), 88);
                assert_eq!(&m[..3], &[2, 3, 4]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            extract_plane(&f, 3),
            Err(SampleError::PlaneOutOfRange { index: 3, planes: 1 })
        ));
    }

    #[test]
    fn averaged_planes() {
        let f = parse_ies(&four_plane_file()).unwrap();
        let s = extract_averaged(&f).unwrap();
        assert_eq!(s.candela()[0], 501.5);
    }

    #[test]
    fn write_pads_to_180_with_zeros() {
        let s = IntensitySamples::new((0..=90).map(|d| (d as f64, 1000.0 / (1.0 + d as f64))).collect()).unwrap();
        let f = parse_ies(&write_ies(&s, NumberFormat::Full, &[])).unwrap();
        assert_eq!(f.polar_angles.len(), 181);
        assert!(f.candela_grid[0][91..].iter().all(|&v| v == 0.0));
        assert_eq!(extract_plane(&f, 0).unwrap(), s);
    }

    #[test]
    fn file_round_trip() {
        let f = parse_ies(&four_plane_file()).unwrap();
        let again = parse_ies(&f.to_ies(NumberFormat::Full)).unwrap();
        assert_eq!(again.candela_grid, f.candela_grid);
        assert_eq!(again.polar_angles, f.polar_angles);
        assert_eq!(again.c_plane_angles, f.c_plane_angles);
    }

    #[test]
    fn csv_round_trip() {
        let s = IntensitySamples::new(vec![(0.0, 1.25), (1.0, 0.1 + 0.2)]).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&s, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("phi_deg,candela\n"));
        assert_eq!(read_samples_csv(&buf[..]).unwrap(), s);
    }

    #[test]
    fn sample_invariants() {
        assert_eq!(IntensitySamples::new(vec![]), Err(SampleError::Empty));
        assert_eq!(
            IntensitySamples::new(vec![(1.0, 1.0), (1.0, 2.0)]),
            Err(SampleError::NotIncreasing(1.0))
        );
        assert!(matches!(
            IntensitySamples::new(vec![(0.0, -1.0)]),
            Err(SampleError::InvalidCandela { .. })
        ));
    }
}
