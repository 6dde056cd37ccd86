//! Line-delimited dataset files.
//!
//! The first line is a header; every other line is one tab-separated record:
//!
//! ```text
//! #rvtc-dataset<TAB>version=1<TAB>d_input=4<TAB>score_min=1<TAB>score_max=10<TAB>has_target2=0
//! id<TAB>group_id<TAB>group_title<TAB>prompt<TAB>target[<TAB>target2]<TAB>f0,f1,f2,f3
//! ```
//!
//! Text fields escape `\`, tab and newline as `\\`, `\t`, `\n`. Numbers use
//! shortest round-trip formatting, so save-then-load is lossless. Paraphrase
//! maps are `original<TAB>paraphrase` lines with the same escaping.

use std::path::Path;

use super::{DataError, Dataset, DatasetHeader, ParaphraseMap, SampleRecord};

const MAGIC: &str = "#rvtc-dataset";
const VERSION: u32 = 1;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str, line: usize) -> Result<String, DataError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => {
                return Err(DataError::MalformedLine {
                    line,
                    msg: format!("bad escape \\{}", other.map(String::from).unwrap_or_default()),
                })
            }
        }
    }
    Ok(out)
}

pub fn records_to_string(ds: &Dataset) -> String {
    let h = &ds.header;
    let mut out = format!(
        "{MAGIC}\tversion={}\td_input={}\tscore_min={}\tscore_max={}\thas_target2={}\n",
        h.version,
        h.d_input,
        h.score_min,
        h.score_max,
        u8::from(h.has_target2)
    );
    for r in &ds.records {
        let mut fields = vec![
            escape(&r.id),
            escape(&r.group_id),
            escape(&r.group_title),
            escape(&r.prompt),
            r.target.to_string(),
        ];
        if let Some(t2) = r.target2 {
            fields.push(t2.to_string());
        }
        let feats: Vec<String> = r.image_features.iter().map(|v| v.to_string()).collect();
        fields.push(feats.join(","));
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    out
}

fn parse_header(line: &str) -> Result<DatasetHeader, DataError> {
    let mut parts = line.split('\t');
    if parts.next() != Some(MAGIC) {
        return Err(DataError::Header(format!("expected {MAGIC}")));
    }
    let (mut version, mut d_input, mut smin, mut smax, mut t2) = (None, None, None, None, None);
    for kv in parts {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| DataError::Header(format!("bad field {kv:?}")))?;
        let bad = || DataError::Header(format!("bad value for {k}: {v:?}"));
        match k {
            "version" => version = Some(v.parse::<u32>().map_err(|_| bad())?),
            "d_input" => d_input = Some(v.parse::<usize>().map_err(|_| bad())?),
            "score_min" => smin = Some(v.parse::<f64>().map_err(|_| bad())?),
            "score_max" => smax = Some(v.parse::<f64>().map_err(|_| bad())?),
            "has_target2" => {
                t2 = Some(match v {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad()),
                })
            }
            _ => return Err(DataError::Header(format!("unknown field {k}"))),
        }
    }
    let missing = |f: &str| DataError::Header(format!("missing {f}"));
    let header = DatasetHeader {
        version: version.ok_or_else(|| missing("version"))?,
        d_input: d_input.ok_or_else(|| missing("d_input"))?,
        score_min: smin.ok_or_else(|| missing("score_min"))?,
        score_max: smax.ok_or_else(|| missing("score_max"))?,
        has_target2: t2.ok_or_else(|| missing("has_target2"))?,
    };
    if header.version != VERSION {
        return Err(DataError::Header(format!("unsupported version {}", header.version)));
    }
    if header.d_input == 0 {
        return Err(DataError::Header("d_input must be positive".into()));
    }
    if !(header.score_min < header.score_max) {
        return Err(DataError::Header("score_min must be below score_max".into()));
    }
    Ok(header)
}

fn parse_f64(s: &str, line: usize, what: &str) -> Result<f64, DataError> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::MalformedLine {
            line,
            msg: format!("bad {what} {s:?}"),
        })
}

pub fn parse_records(text: &str) -> Result<Dataset, DataError> {
    let mut lines = text.lines();
    let header = parse_header(lines.next().ok_or_else(|| DataError::Header("empty file".into()))?)?;
    let expected_fields = if header.has_target2 { 7 } else { 6 };
    let mut records = Vec::new();
    for (i, raw) in lines.enumerate() {
        let line = i + 2;
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != expected_fields {
            return Err(DataError::MalformedLine {
                line,
                msg: format!("expected {expected_fields} fields, got {}", fields.len()),
            });
        }
        let target = parse_f64(fields[4], line, "target")?;
        let target2 = if header.has_target2 {
            Some(parse_f64(fields[5], line, "target2")?)
        } else {
            None
        };
        let feats = fields[expected_fields - 1];
        let image_features = if feats.is_empty() {
            Vec::new()
        } else {
            feats
                .split(',')
                .map(|v| parse_f64(v, line, "feature"))
                .collect::<Result<Vec<_>, _>>()?
        };
        if image_features.len() != header.d_input {
            return Err(DataError::FeatureLength {
                line,
                expected: header.d_input,
                got: image_features.len(),
            });
        }
        for v in std::iter::once(target).chain(target2) {
            if !(header.score_min..=header.score_max).contains(&v) {
                return Err(DataError::TargetOutOfRange {
                    line,
                    value: v,
                    min: header.score_min,
                    max: header.score_max,
                });
            }
        }
        records.push(SampleRecord {
            id: unescape(fields[0], line)?,
            group_id: unescape(fields[1], line)?,
            group_title: unescape(fields[2], line)?,
            prompt: unescape(fields[3], line)?,
            target,
            target2,
            image_features,
        });
    }
    Dataset::new(header, records)
}

pub fn save_records(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, records_to_string(ds)).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))
}

pub fn load_records(path: &Path) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    parse_records(&text)
}

pub fn paraphrase_map_to_string(map: &ParaphraseMap) -> String {
    map.iter()
        .map(|(k, v)| format!("{}\t{}\n", escape(k), escape(v)))
        .collect()
}

pub fn parse_paraphrase_map(text: &str) -> Result<ParaphraseMap, DataError> {
    let mut map = ParaphraseMap::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.is_empty() {
            continue;
        }
        let (k, v) = raw.split_once('\t').ok_or_else(|| DataError::MalformedLine {
            line: i + 1,
            msg: "expected original<TAB>paraphrase".into(),
        })?;
        map.insert(unescape(k, i + 1)?, unescape(v, i + 1)?);
    }
    Ok(map)
}

pub fn save_paraphrase_map(map: &ParaphraseMap, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, paraphrase_map_to_string(map)).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))
}

pub fn load_paraphrase_map(path: &Path) -> Result<ParaphraseMap, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    parse_paraphrase_map(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "#rvtc-dataset\tversion=1\td_input=2\tscore_min=1\tscore_max=10\thas_target2=0\n";

    #[test]
    fn empty_file_with_header() {
        let ds = parse_records(HEADER).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.header.d_input, 2);
    }

    #[test]
    fn external_export_loads() {
        // id, features, title and MOS exported from an external pipeline.
        let text = format!(
            "{HEADER}img_0042\t17\tRule of Thirds\tRule of Thirds\t5.62\t0.125,-1.5\n\
             img_0043\t17\tRule of Thirds\t\t6.1\t0.3,2e-3\n"
        );
        let ds = parse_records(&text).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.records[0].group_title, "Rule of Thirds");
        assert_eq!(ds.records[1].prompt, "");
        assert_eq!(ds.records[1].image_features, vec![0.3, 0.002]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad_len = format!("{HEADER}a\tg\tt\tp\t5\t1,2\nb\tg\tt\tp\t5\t1\n");
        assert_eq!(
            parse_records(&bad_len),
            Err(DataError::FeatureLength {
                line: 3,
                expected: 2,
                got: 1
            })
        );
        let out_of_range = format!("{HEADER}a\tg\tt\tp\t11\t1,2\n");
        assert!(matches!(
            parse_records(&out_of_range),
            Err(DataError::TargetOutOfRange { line: 2, .. })
        ));
        let malformed = format!("{HEADER}a\tg\tt\n");
        assert!(matches!(
            parse_records(&malformed),
            Err(DataError::MalformedLine { line: 2, .. })
        ));
        let inconsistent = format!("{HEADER}a\tg\tt1\tp\t5\t1,2\nb\tg\tt2\tp\t5\t1,2\n");
        assert_eq!(
            parse_records(&inconsistent),
            Err(DataError::InconsistentGroupTitle("g".into()))
        );
        assert!(matches!(parse_records("garbage\n"), Err(DataError::Header(_))));
        assert!(matches!(parse_records(""), Err(DataError::Header(_))));
    }

    #[test]
    fn escaping_round_trips() {
        let header = DatasetHeader {
            version: 1,
            d_input: 1,
            score_min: 0.0,
            score_max: 5.0,
            has_target2: true,
        };
        let ds = Dataset::new(
            header,
            vec![SampleRecord {
                id: "x\\y".into(),
                image_features: vec![0.1 + 0.2],
                prompt: "tab\there\nnewline".into(),
                group_id: "g".into(),
                group_title: "T".into(),
                target: 1.0 / 3.0,
                target2: Some(4.999999999999),
            }],
        )
        .unwrap();
        assert_eq!(parse_records(&records_to_string(&ds)).unwrap(), ds);
    }

    #[test]
    fn paraphrase_map_round_trip() {
        let mut m = ParaphraseMap::new();
        m.insert("Vivid Urban Night".into(), "Bright Metropolitan Night".into());
        m.insert("a\tb".into(), "c".into());
        assert_eq!(parse_paraphrase_map(&paraphrase_map_to_string(&m)).unwrap(), m);
        assert!(parse_paraphrase_map("no tab here\n").is_err());
    }
}
