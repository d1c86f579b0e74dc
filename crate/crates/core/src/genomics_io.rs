//! FASTA and TSV ingestion.
//!
//! Records are uppercased on parse (soft-masked lowercase bases are treated as
//! ordinary sequence). Corpus building strips hard-masked `N` runs and keeps one
//! segment per record so that downstream cropping never joins two records.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FastaRecord {
    pub id: String,
    pub description: String,
    pub sequence: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanCorpus {
    pub segments: Vec<Vec<u8>>,
    pub total_bases: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub sequence: Vec<u8>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqPair {
    pub source: Vec<u8>,
    pub target: Vec<u8>,
}

/// Parses multi-record FASTA with arbitrary line wrapping.
pub fn parse_fasta(raw: &[u8]) -> Result<Vec<FastaRecord>> {
    let mut records: Vec<FastaRecord> = Vec::new();
    for (idx, line) in raw.split(|&b| b == b'\n').enumerate() {
        let line_no = idx + 1;
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix(b">") {
            let header = std::str::from_utf8(header).map_err(|_| Error::Parse {
                line: line_no,
                message: "header is not valid UTF-8".into(),
            })?;
            let header = header.trim();
            let (id, description) = match header.split_once(char::is_whitespace) {
                Some((id, rest)) => (id, rest.trim()),
                None => (header, ""),
            };
            if id.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "header has an empty id".into(),
                });
            }
            records.push(FastaRecord {
                id: id.to_string(),
                description: description.to_string(),
                sequence: Vec::new(),
            });
        } else {
            let record = records.last_mut().ok_or_else(|| Error::Parse {
                line: line_no,
                message: "sequence data before the first '>' header".into(),
            })?;
            record.sequence.extend(
                line.iter()
                    .filter(|b| !b.is_ascii_whitespace())
                    .map(u8::to_ascii_uppercase),
            );
        }
    }
    Ok(records)
}

/// Writes records back as FASTA, wrapping sequence lines at `width` bases.
pub fn write_fasta<W: Write>(out: &mut W, records: &[FastaRecord], width: usize) -> std::io::Result<()> {
    let width = width.max(1);
    for record in records {
        if record.description.is_empty() {
            writeln!(out, ">{}", record.id)?;
        } else {
            writeln!(out, ">{} {}", record.id, record.description)?;
        }
        for chunk in record.sequence.chunks(width) {
            out.write_all(chunk)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_fasta_file(path: &Path) -> Result<Vec<FastaRecord>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_fasta(&raw)
}

/// Removes hard-masked `N` bases. Anything outside `ACGTN` is rejected.
pub fn clean_sequence(seq: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(seq.len());
    for (position, &b) in seq.iter().enumerate() {
        match b {
            b'A' | b'C' | b'G' | b'T' => out.push(b),
            b'N' => {}
            other => {
                return Err(Error::InvalidBase {
                    position,
                    byte: other as char,
                })
            }
        }
    }
    Ok(out)
}

pub fn build_corpus(records: &[FastaRecord]) -> Result<CleanCorpus> {
    let mut segments = Vec::with_capacity(records.len());
    for record in records {
        let cleaned = clean_sequence(&record.sequence)?;
        if !cleaned.is_empty() {
            segments.push(cleaned);
        }
    }
    if segments.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let total_bases = segments.iter().map(Vec::len).sum();
    Ok(CleanCorpus {
        segments,
        total_bases,
    })
}

fn split_row(line: &str, line_no: usize) -> Result<(&str, &str)> {
    let mut cols = line.split('\t');
    match (cols.next(), cols.next(), cols.next()) {
        (Some(a), Some(b), None) => Ok((a, b)),
        _ => Err(Error::Parse {
            line: line_no,
            message: format!(
                "expected 2 tab-separated columns, found {}",
                line.split('\t').count()
            ),
        }),
    }
}

fn rows(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.is_empty())
}

pub fn parse_labeled_tsv(text: &str) -> Result<Vec<LabeledExample>> {
    rows(text)
        .map(|(line_no, line)| {
            let (seq, label) = split_row(line, line_no)?;
            let label = label.trim().parse::<usize>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("label {label:?} is not a non-negative integer"),
            })?;
            Ok(LabeledExample {
                sequence: seq.as_bytes().to_vec(),
                label,
            })
        })
        .collect()
}

pub fn parse_pairs_tsv(text: &str) -> Result<Vec<SeqPair>> {
    rows(text)
        .map(|(line_no, line)| {
            let (source, target) = split_row(line, line_no)?;
            if source.is_empty() || target.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "source and target must be non-empty".into(),
                });
            }
            Ok(SeqPair {
                source: source.as_bytes().to_vec(),
                target: target.as_bytes().to_vec(),
            })
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_labeled_tsv(path: &Path) -> Result<Vec<LabeledExample>> {
    parse_labeled_tsv(&read_text(path)?)
}

pub fn load_pairs_tsv(path: &Path) -> Result<Vec<SeqPair>> {
    parse_pairs_tsv(&read_text(path)?)
}

pub fn write_labeled_tsv<W: Write>(out: &mut W, examples: &[LabeledExample]) -> std::io::Result<()> {
    for ex in examples {
        out.write_all(&ex.sequence)?;
        writeln!(out, "\t{}", ex.label)?;
    }
    Ok(())
}

pub fn write_pairs_tsv<W: Write>(out: &mut W, pairs: &[SeqPair]) -> std::io::Result<()> {
    for p in pairs {
        out.write_all(&p.source)?;
        out.write_all(b"\t")?;
        out.write_all(&p.target)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_and_uppercases() {
        let recs = parse_fasta(b">chr1 test\nACGT\nacgt\n").unwrap();
        assert_eq!(
            recs,
            vec![FastaRecord {
                id: "chr1".into(),
                description: "test".into(),
                sequence: b"ACGTACGT".to_vec(),
            }]
        );
    }

    #[test]
    fn empty_and_multi_record() {
        assert!(parse_fasta(b"").unwrap().is_empty());
        let recs = parse_fasta(b">a\nAC\n>b\nGT\n").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].sequence, b"AC");
        assert_eq!(recs[1].sequence, b"GT");
    }

    #[test]
    fn data_before_header_names_line() {
        match parse_fasta(b"\nACGT\n>a\nAC\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn crlf_tolerated() {
        let recs = parse_fasta(b">x y z\r\nAC\r\nGT\r\n").unwrap();
        assert_eq!(recs[0].description, "y z");
        assert_eq!(recs[0].sequence, b"ACGT");
    }

    #[test]
    fn clean_examples() {
        assert_eq!(clean_sequence(b"ACNNGT").unwrap(), b"ACGT");
        assert_eq!(clean_sequence(b"NNNN").unwrap(), b"");
        assert_eq!(clean_sequence(b"ACGT").unwrap(), b"ACGT");
        match clean_sequence(b"ACXG") {
            Err(Error::InvalidBase { position, byte }) => {
                assert_eq!(position, 2);
                assert_eq!(byte, 'X');
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn rec(seq: &[u8]) -> FastaRecord {
        FastaRecord {
            id: "r".into(),
            description: String::new(),
            sequence: seq.to_vec(),
        }
    }

    #[test]
    fn corpus_examples() {
        let c = build_corpus(&[rec(b"ACNN"), rec(b"GT")]).unwrap();
        assert_eq!(c.segments, vec![b"AC".to_vec(), b"GT".to_vec()]);
        assert_eq!(c.total_bases, 4);
        assert!(matches!(build_corpus(&[rec(b"NN")]), Err(Error::EmptyCorpus)));
        let hundred = vec![b'A'; 100];
        let c = build_corpus(&[rec(&hundred), rec(&hundred), rec(&hundred)]).unwrap();
        assert_eq!(c.total_bases, 300);
    }

    #[test]
    fn tsv_forms() {
        assert_eq!(
            parse_labeled_tsv("ACGT\t1\n").unwrap(),
            vec![LabeledExample {
                sequence: b"ACGT".to_vec(),
                label: 1
            }]
        );
        assert_eq!(
            parse_pairs_tsv("ACGT\tAGT\n").unwrap(),
            vec![SeqPair {
                source: b"ACGT".to_vec(),
                target: b"AGT".to_vec()
            }]
        );
        assert!(matches!(
            parse_labeled_tsv("ACGT\tx\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_labeled_tsv("ACGT\t1\nAC\t1\t2\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    fn base() -> impl Strategy<Value = u8> {
        prop::sample::select(vec![b'A', b'C', b'G', b'T', b'N'])
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(seq in prop::collection::vec(base(), 0..200)) {
            let once = clean_sequence(&seq).unwrap();
            prop_assert_eq!(clean_sequence(&once).unwrap(), once);
        }

        #[test]
        fn serialize_parse_fixed_point(
            seqs in prop::collection::vec(prop::collection::vec(base(), 1..150), 1..5),
            width in 1usize..90,
        ) {
            let records: Vec<FastaRecord> = seqs
                .iter()
                .enumerate()
                .map(|(i, s)| FastaRecord { id: format!("s{i}"), description: "d e".into(), sequence: s.clone() })
                .collect();
            let mut buf = Vec::new();
            write_fasta(&mut buf, &records, width).unwrap();
            let parsed = parse_fasta(&buf).unwrap();
            prop_assert_eq!(&parsed, &records);
            let corpus = build_corpus(&parsed);
            let expected: usize = seqs.iter().map(|s| s.iter().filter(|&&b| b != b'N').count()).sum();
            match corpus {
                Ok(c) => prop_assert_eq!(c.total_bases, expected),
                Err(Error::EmptyCorpus) => prop_assert_eq!(expected, 0),
                Err(e) => prop_assert!(false, "{}", e),
            }
        }
    }
}
