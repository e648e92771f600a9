//! Series and alignment files.
//!
//! Text series: a header `# rate_hz=<r> channels=<c1,c2,...>` followed by
//! one tab-separated row per frame. Binary series: the bytes `TRF1`, a
//! little-endian `u32` header length, the same header fields as text, then
//! row-major little-endian `f64` samples. Alignments are tab-separated
//! `start_s end_s label` rows under a header line.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::features::{PhonemeAlignment, PhonemeSpan};
use crate::preprocess::MultiChannelSeries;

pub const BINARY_MAGIC: &[u8; 4] = b"TRF1";
const ALIGNMENT_HEADER: &str = "start_s\tend_s\tlabel";

fn header_fields(series: &MultiChannelSeries) -> Result<String> {
    for name in series.channel_names() {
        if name.is_empty() || name.contains([',', ' ', '\t', '\n', '=']) {
            return Err(Error::Format(format!("channel name '{name}' cannot be written")));
        }
    }
    Ok(format!(
        "rate_hz={} channels={}",
        series.sample_rate_hz(),
        series.channel_names().join(",")
    ))
}

fn parse_header(fields: &str) -> Result<(f64, Vec<String>)> {
    let mut rate = None;
    let mut channels = None;
    for field in fields.split_whitespace() {
        match field.split_once('=') {
            Some(("rate_hz", v)) => {
                rate = Some(
                    v.parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad rate_hz '{v}'")))?,
                )
            }
            Some(("channels", v)) => channels = Some(v.split(',').map(str::to_string).collect::<Vec<_>>()),
            _ => return Err(Error::Format(format!("unknown header field '{field}'"))),
        }
    }
    match (rate, channels) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::Format("header needs rate_hz and channels".into())),
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn series_to_text(series: &MultiChannelSeries) -> Result<String> {
    let mut out = format!("# {}\n", header_fields(series)?);
    let data = series.data();
    for t in 0..series.n_frames() {
        let row: Vec<String> = (0..series.n_channels()).map(|c| format!("{}", data[(t, c)])).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    Ok(out)
}

pub fn series_from_text(text: &str) -> Result<MultiChannelSeries> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|l| l.strip_prefix('#'))
        .ok_or_else(|| Error::Format("missing '# rate_hz=... channels=...' header".into()))?;
    let (rate, channels) = parse_header(header)?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for tok in line.split('\t') {
            values.push(
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {}: bad number '{tok}'", k + 2)))?,
            );
        }
        if values.len() - before != channels.len() {
            return Err(Error::Format(format!(
                "line {}: expected {} columns, found {}",
                k + 2,
                channels.len(),
                values.len() - before
            )));
        }
        rows += 1;
    }
    MultiChannelSeries::new(DMatrix::from_row_slice(rows, channels.len(), &values), rate, channels)
}

pub fn series_to_binary(series: &MultiChannelSeries) -> Result<Vec<u8>> {
    let header = header_fields(series)?;
    let mut out = Vec::with_capacity(8 + header.len() + 8 * series.data().len());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    let data = series.data();
    for t in 0..series.n_frames() {
        for c in 0..series.n_channels() {
            out.extend_from_slice(&data[(t, c)].to_le_bytes());
        }
    }
    Ok(out)
}

pub fn series_from_binary(bytes: &[u8]) -> Result<MultiChannelSeries> {
    if bytes.len() < 8 || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::Format("missing TRF1 magic".into()));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes")) as usize;
    let header = bytes
        .get(8..8 + len)
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    let header = std::str::from_utf8(header).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let (rate, channels) = parse_header(header)?;
    let body = &bytes[8 + len..];
    let width = 8 * channels.len();
    if width == 0 || !body.len().is_multiple_of(width) {
        return Err(Error::Format(format!(
            "{} data bytes do not fill rows of {} channels",
            body.len(),
            channels.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("eight bytes")))
        .collect();
    MultiChannelSeries::new(
        DMatrix::from_row_slice(body.len() / width, channels.len(), &values),
        rate,
        channels,
    )
}

/// Reads either format, chosen by the leading bytes.
pub fn read_series(path: &Path) -> Result<MultiChannelSeries> {
    let read = || -> Result<MultiChannelSeries> {
        let bytes = fs::read(path)?;
        if bytes.starts_with(BINARY_MAGIC) {
            series_from_binary(&bytes)
        } else {
            let text = String::from_utf8(bytes).map_err(|_| Error::Format("not UTF-8 text".into()))?;
            series_from_text(&text)
        }
    };
    read().map_err(|e| e.in_file(path))
}

pub fn write_series_text(path: &Path, series: &MultiChannelSeries) -> Result<()> {
    write_atomically(path, series_to_text(series)?.as_bytes()).map_err(|e| e.in_file(path))
}

pub fn write_series_binary(path: &Path, series: &MultiChannelSeries) -> Result<()> {
    write_atomically(path, &series_to_binary(series)?).map_err(|e| e.in_file(path))
}

pub fn alignment_to_text(align: &PhonemeAlignment) -> String {
    let mut out = format!("{ALIGNMENT_HEADER}\n");
    for s in align.spans() {
        out.push_str(&format!("{}\t{}\t{}\n", s.start_s, s.end_s, s.label));
    }
    out
}

pub fn alignment_from_text(utterance_id: &str, text: &str) -> Result<PhonemeAlignment> {
    let mut spans = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (k == 0 && line.trim_end() == ALIGNMENT_HEADER) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 || cols.len() > 3 {
            return Err(Error::Format(format!("line {}: expected start, end and label", k + 1)));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("line {}: bad time '{s}'", k + 1)))
        };
        spans.push(PhonemeSpan {
            start_s: num(cols[0])?,
            end_s: num(cols[1])?,
            label: cols.get(2).map_or("", |l| l.trim()).to_string(),
        });
    }
    PhonemeAlignment::new(utterance_id, spans)
}

pub fn read_alignment(path: &Path) -> Result<PhonemeAlignment> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    let read = || -> Result<PhonemeAlignment> { alignment_from_text(&id, &fs::read_to_string(path)?) };
    read().map_err(|e| e.in_file(path))
}

pub fn write_alignment(path: &Path, align: &PhonemeAlignment) -> Result<()> {
    write_atomically(path, alignment_to_text(align).as_bytes()).map_err(|e| e.in_file(path))
}

/// Writes a tab-separated table with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "{}", header.join("\t"))?;
    for row in rows {
        writeln!(buf, "{}", row.join("\t"))?;
    }
    write_atomically(path, &buf).map_err(|e| e.in_file(path))
}

/// Reads a table written by [`write_table`]: header names and rows.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let read = || -> Result<(Vec<String>, Vec<Vec<String>>)> {
        let mut lines = BufReader::new(fs::File::open(path)?).lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::Format("empty table".into()))?;
        let header: Vec<String> = header.split('\t').map(str::to_string).collect();
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let row: Vec<String> = line.split('\t').map(str::to_string).collect();
            if row.len() != header.len() {
                return Err(Error::Format(format!(
                    "row has {} fields, header has {}",
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
        }
        Ok((header, rows))
    };
    read().map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sample() -> MultiChannelSeries {
        MultiChannelSeries::new(
            DMatrix::from_row_slice(3, 2, &[0.1, -2.5, 1e-300, 3.0, f64::MAX, -0.0]),
            2000.0,
            vec!["ch1".into(), "ch2".into()],
        )
        .unwrap()
    }

    #[test]
    fn text_layout() {
        let text = series_to_text(&sample()).unwrap();
        assert!(text.starts_with("# rate_hz=2000 channels=ch1,ch2\n0.1\t-2.5\n"));
        assert_eq!(series_from_text(&text).unwrap(), sample());
    }

    #[test]
    fn binary_layout() {
        let bytes = series_to_binary(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"TRF1");
        let header = "rate_hz=2000 channels=ch1,ch2";
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize, header.len());
        assert_eq!(bytes.len(), 8 + header.len() + 6 * 8);
        // row-major: the second sample is row 0, channel 1
        let off = 8 + header.len() + 8;
        assert_eq!(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()), -2.5);
        assert_eq!(series_from_binary(&bytes).unwrap(), sample());
    }

    #[test]
    fn malformed_inputs() {
        assert!(series_from_text("0.1\t0.2\n").is_err());
        assert!(series_from_text("# rate_hz=50 channels=a,b\n0.1\n").is_err());
        assert!(series_from_text("# rate_hz=50 channels=a\nx\n").is_err());
        assert!(series_from_binary(b"TRF0\0\0\0\0").is_err());
        let mut bytes = series_to_binary(&sample()).unwrap();
        bytes.pop();
        assert!(series_from_binary(&bytes).is_err());
    }

    #[test]
    fn files_round_trip_and_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let text = dir.path().join("a/b.tsv");
        let bin = dir.path().join("b.trf");
        write_series_text(&text, &sample()).unwrap();
        write_series_binary(&bin, &sample()).unwrap();
        assert_eq!(read_series(&text).unwrap(), sample());
        assert_eq!(read_series(&bin).unwrap(), sample());
        let bad = dir.path().join("bad.tsv");
        fs::write(&bad, "# rate_hz=50 channels=a\nnope\n").unwrap();
        let msg = read_series(&bad).unwrap_err().to_string();
        assert!(msg.contains("bad.tsv"), "{msg}");
    }

    #[test]
    fn alignment_round_trip() {
        let text = "start_s\tend_s\tlabel\n0\t0.2\tsil\n0.2\t0.35\tAH\n0.35\t0.5\t\n";
        let a = alignment_from_text("u", text).unwrap();
        assert_eq!(a.spans().len(), 3);
        assert_eq!(a.spans()[2].label, "");
        assert_eq!(alignment_from_text("u", &alignment_to_text(&a)).unwrap(), a);
        assert!(alignment_from_text("u", "0\t0.2\tA\n0.1\t0.3\tB\n").is_err());
    }

    #[test]
    fn table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tsv");
        write_table(&p, &["a", "b"], &[vec!["1".into(), "x".into()]]).unwrap();
        let (h, rows) = read_table(&p).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(rows, vec![vec!["1".to_string(), "x".to_string()]]);
    }

    proptest! {
        #[test]
        fn both_formats_round_trip_exactly(
            rows in 1usize..20,
            cols in 1usize..5,
            seed in proptest::collection::vec(-1e6f64..1e6, 100),
            rate in 1.0f64..5000.0,
        ) {
            let data = DMatrix::from_fn(rows, cols, |t, c| seed[(t * cols + c) % seed.len()] / (1.0 + c as f64 * 3.7));
            let names = (0..cols).map(|c| format!("c{c}")).collect();
            let s = MultiChannelSeries::new(data, rate, names).unwrap();
            prop_assert_eq!(&series_from_text(&series_to_text(&s).unwrap()).unwrap(), &s);
            prop_assert_eq!(&series_from_binary(&series_to_binary(&s).unwrap()).unwrap(), &s);
        }
    }
}
