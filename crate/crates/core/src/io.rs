//! File formats: schema text files, feature/label CSVs and comment JSONL.
//!
//! Feature matrix CSV: header `id,<col_0>,...,<col_{M-1}>`, one row per
//! instance. Label CSV: header `id,label`, label is the 1-based ordinal level.
//! Comment JSONL: one object per line with `user_id`, `timestamp`
//! (ISO-8601), `community_id` and `toxicity`.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};

use crate::data::{Dataset, FeatureSchema, OrdinalLabel};
use crate::error::{Error, Result};
use crate::labelling::CommentRecord;

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Parses the schema grammar: `group <NAME>` lines open a group, `<BLOCK> <COLUMNS>`
/// lines declare blocks, `#` starts a comment line.
pub fn parse_schema(text: &str) -> Result<FeatureSchema> {
    parse_schema_named(text, "<schema>")
}

fn parse_schema_named(text: &str, source: &str) -> Result<FeatureSchema> {
    let mut groups: Vec<(String, Vec<(String, usize)>)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["group", name] => groups.push((name.to_string(), Vec::new())),
            [name, count] => {
                let count: usize = count.parse().map_err(|_| {
                    Error::ingest(source, lineno + 1, format!("invalid column count `{count}`"))
                })?;
                let Some((_, blocks)) = groups.last_mut() else {
                    return Err(Error::ingest(source, lineno + 1, "block declared before any group"));
                };
                blocks.push((name.to_string(), count));
            }
            _ => {
                return Err(Error::ingest(
                    source,
                    lineno + 1,
                    format!("expected `group <NAME>` or `<BLOCK> <COLUMNS>`, got `{line}`"),
                ))
            }
        }
    }
    FeatureSchema::new(groups)
}

pub fn schema_to_text(schema: &FeatureSchema) -> String {
    let mut out = String::new();
    let mut current: Option<&str> = None;
    for b in schema.blocks() {
        if current != Some(b.group.as_str()) {
            if current.is_some() {
                out.push('\n');
            }
            out.push_str(&format!("group {}\n", b.group));
            current = Some(&b.group);
        }
        out.push_str(&format!("  {} {}\n", b.name, b.len));
    }
    out
}

pub fn load_schema(path: &Path) -> Result<FeatureSchema> {
    let text = std::fs::read_to_string(path)?;
    parse_schema_named(&text, &display(path))
}

pub fn load_feature_matrix(path: &Path) -> Result<(Array2<f64>, Vec<String>)> {
    let src = display(path);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(File::open(path)?));
    let header = reader
        .headers()
        .map_err(|e| Error::ingest(&src, 1, e.to_string()))?
        .clone();
    if header.get(0) != Some("id") {
        return Err(Error::ingest(&src, 1, "first header column must be `id`"));
    }
    let width = header.len() - 1;
    let mut values = Vec::new();
    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::ingest(&src, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != width + 1 {
            return Err(Error::ingest(
                &src,
                line,
                format!("expected {} fields, found {}", width + 1, record.len()),
            ));
        }
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::ingest(&src, line, format!("duplicate id `{id}`")));
        }
        for field in record.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::ingest(&src, line, format!("invalid number `{field}`")))?;
            if !v.is_finite() {
                return Err(Error::ingest(&src, line, format!("non-finite value `{field}`")));
            }
            values.push(v);
        }
        ids.push(id);
    }
    let matrix = Array2::from_shape_vec((ids.len(), width), values)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok((matrix, ids))
}

pub fn load_labels(path: &Path, n_classes: usize) -> Result<Vec<(String, OrdinalLabel)>> {
    let src = display(path);
    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let header = reader
        .headers()
        .map_err(|e| Error::ingest(&src, 1, e.to_string()))?
        .clone();
    if header.len() != 2 || &header[0] != "id" || &header[1] != "label" {
        return Err(Error::ingest(&src, 1, "label header must be `id,label`"));
    }
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::ingest(&src, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::ingest(&src, line, format!("duplicate id `{id}`")));
        }
        let level: u8 = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::ingest(&src, line, format!("invalid label `{}`", &record[1])))?;
        let label = OrdinalLabel::new(level, n_classes)
            .map_err(|e| Error::ingest(&src, line, e.to_string()))?;
        out.push((id, label));
    }
    Ok(out)
}

/// Joins features and labels on `id`; feature rows without a label are dropped.
/// Rows keep the feature file order.
pub fn assemble_dataset(
    features: Array2<f64>,
    ids: Vec<String>,
    labels: &[(String, OrdinalLabel)],
    schema: FeatureSchema,
    n_classes: usize,
) -> Result<Dataset> {
    if features.ncols() != schema.width() {
        return Err(Error::SchemaMismatch(format!(
            "schema declares {} columns but feature matrix has {}",
            schema.width(),
            features.ncols()
        )));
    }
    let by_id: HashMap<&str, OrdinalLabel> = labels.iter().map(|(i, l)| (i.as_str(), *l)).collect();
    let mut rows = Vec::new();
    let mut kept_labels = Vec::new();
    let mut kept_ids = Vec::new();
    for (r, id) in ids.iter().enumerate() {
        if let Some(&l) = by_id.get(id.as_str()) {
            rows.push(r);
            kept_labels.push(l);
            kept_ids.push(id.clone());
        }
    }
    if rows.len() < ids.len() {
        log::info!("{} feature rows have no label and were dropped", ids.len() - rows.len());
    }
    let matrix = features.select(ndarray::Axis(0), &rows);
    Dataset::new(matrix, kept_labels, kept_ids, Arc::new(schema), n_classes)
}

pub fn load_dataset(
    features: &Path,
    labels: &Path,
    schema: &Path,
    n_classes: usize,
) -> Result<Dataset> {
    let schema = load_schema(schema)?;
    let (matrix, ids) = load_feature_matrix(features)?;
    let labels = load_labels(labels, n_classes)?;
    assemble_dataset(matrix, ids, &labels, schema, n_classes)
}

pub fn write_feature_matrix(path: &Path, features: ArrayView2<'_, f64>, ids: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "id")?;
    for c in 0..features.ncols() {
        write!(w, ",col_{c}")?;
    }
    writeln!(w)?;
    for (id, row) in ids.iter().zip(features.rows()) {
        write!(w, "{id}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_labels<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = (&'a str, OrdinalLabel)>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "id,label")?;
    for (id, l) in rows {
        writeln!(w, "{id},{l}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_feature_matrix(&dir.join("features.csv"), data.features(), data.ids())?;
    write_labels(
        &dir.join("labels.csv"),
        data.ids().iter().map(String::as_str).zip(data.labels().iter().copied()),
    )?;
    std::fs::write(dir.join("schema.txt"), schema_to_text(data.schema()))?;
    Ok(())
}

pub fn read_comments(path: &Path) -> Result<Vec<CommentRecord>> {
    let src = display(path);
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CommentRecord = serde_json::from_str(&line)
            .map_err(|e| Error::ingest(&src, i + 1, e.to_string()))?;
        if !(0.0..=1.0).contains(&rec.toxicity) {
            return Err(Error::ingest(&src, i + 1, format!("toxicity {} outside [0,1]", rec.toxicity)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_comments(path: &Path, comments: &[CommentRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for c in comments {
        serde_json::to_writer(&mut w, c).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    const FEATURES: &str = "id,a,b,c,d,e\nu1,1,2,3,4,5\nu2,6,7,8,9,10\nu3,0.5,-1,2e3,0,1\n";

    #[test]
    fn parses_well_formed_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "f.csv", FEATURES);
        let (m, ids) = load_feature_matrix(&f).unwrap();
        assert_eq!(m.dim(), (3, 5));
        assert_eq!(ids, ["u1", "u2", "u3"]);
        assert_eq!(m[[2, 2]], 2000.0);
    }

    #[test]
    fn schema_width_mismatch_names_both_counts() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "f.csv", FEATURES);
        let s = write(dir.path(), "s.txt", "group G\n A 2\n B 4\n");
        let l = write(dir.path(), "l.csv", "id,label\nu1,1\nu2,2\nu3,3\n");
        let err = load_dataset(&f, &l, &s, 5).unwrap_err().to_string();
        assert!(err.contains('6') && err.contains('5'), "{err}");
    }

    #[test]
    fn nan_error_cites_line() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "f.csv", "id,a,b\nu1,NaN,1\n");
        let err = load_feature_matrix(&f).unwrap_err();
        match err {
            Error::Ingestion { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "f.csv", "id,a\nu1,1\nu1,2\n");
        assert!(matches!(load_feature_matrix(&f), Err(Error::Ingestion { line: 3, .. })));
    }

    #[test]
    fn schema_text_round_trip() {
        let s = FeatureSchema::paper();
        let again = parse_schema(&schema_to_text(&s)).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn schema_grammar_errors() {
        assert!(matches!(parse_schema("A 3\n"), Err(Error::Ingestion { line: 1, .. })));
        assert!(matches!(parse_schema("group G\nA x\n"), Err(Error::Ingestion { line: 2, .. })));
    }
}
