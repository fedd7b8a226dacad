//! Plain-text file formats: datasets, label schemas, label mappings and
//! probability matrices.
//!
//! Datasets and matrices are tab-separated with a header row. Text fields
//! escape tabs, newlines, carriage returns and backslashes as `\t`, `\n`,
//! `\r` and `\\`.

use std::fs;
use std::path::Path;

use depkit_core::corpus::{CorpusError, LabelMapping, LabelSchema, LabeledDataset, LabeledPost, Post, SplitTag};
use depkit_core::probs::ProbabilityMatrix;

use crate::error::{Error, Result};

pub const DATASET_HEADER: &str = "pid\ttext\tlabel";

pub fn escape_field(s: &str) -> String {
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

/// Inverse of [`escape_field`]. Unknown escapes are kept verbatim.
pub fn unescape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(Error::io(path))
}

/// Writes through a temporary sibling and renames it into place, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.{}.tmp", std::process::id()));
    fs::write(&tmp, contents).map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io(path))
}

fn lines(src: &str) -> impl Iterator<Item = (usize, &str)> {
    src.lines().enumerate().map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

/// Parses dataset text. `path` is only used in error messages.
pub fn parse_dataset(src: &str, path: &Path, name: &str, schema: &LabelSchema, split: SplitTag) -> Result<LabeledDataset> {
    let malformed = |line: usize, reason: String| Error::MalformedRow { path: path.to_path_buf(), line, reason };
    let mut rows = lines(src);
    match rows.next() {
        Some((_, header)) if header.trim_start_matches('\u{feff}') == DATASET_HEADER => {}
        Some((line, header)) => return Err(malformed(line, format!("expected header {DATASET_HEADER:?}, found {header:?}"))),
        None => return Err(Error::EmptyDataset(path.to_path_buf())),
    }
    let mut items = Vec::new();
    for (line, row) in rows {
        let fields: Vec<&str> = row.split('\t').collect();
        let [id, text, label] = fields[..] else {
            return Err(malformed(line, format!("expected 3 tab-separated columns, found {}", fields.len())));
        };
        let label = schema.resolve(label.trim()).map_err(|_| Error::UnknownLabel {
            path: path.to_path_buf(),
            line,
            label: label.to_string(),
            schema: schema.name().to_string(),
        })?;
        let post = Post::new(unescape_field(id), unescape_field(text)).map_err(|e| malformed(line, e.to_string()))?;
        items.push(LabeledPost { post, label });
    }
    if items.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    LabeledDataset::new(name, schema.clone(), split, items).map_err(|e| match e {
        CorpusError::DuplicateId(id) => malformed(0, format!("duplicate post id {id:?}")),
        other => other.into(),
    })
}

pub fn load_dataset(path: &Path, name: &str, schema: &LabelSchema, split: SplitTag) -> Result<LabeledDataset> {
    parse_dataset(&read_text(path)?, path, name, schema, split)
}

/// Dataset text with labels written as level names.
pub fn format_dataset(ds: &LabeledDataset) -> String {
    let mut out = String::from(DATASET_HEADER);
    out.push('\n');
    for item in ds.items() {
        let label = ds.schema().level_name(item.label).expect("dataset labels are valid");
        out.push_str(&format!("{}\t{}\t{}\n", escape_field(&item.post.id), escape_field(&item.post.text), label));
    }
    out
}

pub fn write_dataset(path: &Path, ds: &LabeledDataset) -> Result<()> {
    write_atomic(path, format_dataset(ds))
}

/// Schema file: TOML with `name` and an ordered `levels` list.
pub fn load_schema(path: &Path) -> Result<LabelSchema> {
    toml::from_str(&read_text(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn write_schema(path: &Path, schema: &LabelSchema) -> Result<()> {
    let text = toml::to_string(schema).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(path, text)
}

/// A built-in schema name (or dataset alias), else a schema file relative to `base`.
pub fn resolve_schema(spec: &str, base: &Path) -> Result<LabelSchema> {
    match LabelSchema::builtin(spec) {
        Some(schema) => Ok(schema),
        None => load_schema(&base.join(spec)),
    }
}

/// Mapping file: `source_index -> target_index` per line, `#` comments.
/// The mapping is named after the file stem.
pub fn load_mapping(path: &Path, source: &LabelSchema, target: &LabelSchema) -> Result<LabelMapping> {
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "mapping".into());
    Ok(LabelMapping::parse(name, source.clone(), target.clone(), &read_text(path)?)?)
}

/// A built-in mapping name, else a mapping file relative to `base`.
pub fn resolve_mapping(spec: &str, base: &Path, source: &LabelSchema, target: &LabelSchema) -> Result<LabelMapping> {
    match LabelMapping::builtin(spec) {
        Some(mapping) => Ok(mapping),
        None => load_mapping(&base.join(spec), source, target),
    }
}

/// Matrix text: header `pid p0 p1 ...`, one row per post, probabilities
/// in scientific notation with 17 significant digits (exact for f64).
pub fn format_matrix(pm: &ProbabilityMatrix) -> String {
    let mut out = String::from("pid");
    for c in 0..pm.classes() {
        out.push_str(&format!("\tp{c}"));
    }
    out.push('\n');
    for (id, row) in pm.post_ids().iter().zip(pm.rows()) {
        out.push_str(&escape_field(id));
        for p in row {
            out.push_str(&format!("\t{p:.16e}"));
        }
        out.push('\n');
    }
    out
}

pub fn parse_matrix(src: &str, path: &Path) -> Result<ProbabilityMatrix> {
    let bad = |line: usize, reason: String| Error::Format { path: path.to_path_buf(), reason: format!("line {line}: {reason}") };
    let mut rows = lines(src);
    let (_, header) = rows.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let columns: Vec<&str> = header.split('\t').collect();
    let expected: Vec<String> = (0..columns.len().saturating_sub(1)).map(|c| format!("p{c}")).collect();
    if columns.first() != Some(&"pid") || columns[1..] != expected {
        return Err(bad(1, format!("expected header pid\\tp0\\tp1..., found {header:?}")));
    }
    let classes = expected.len();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (line, row) in rows {
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != classes + 1 {
            return Err(bad(line, format!("expected {} columns, found {}", classes + 1, fields.len())));
        }
        ids.push(unescape_field(fields[0]));
        for f in &fields[1..] {
            values.push(f.trim().parse::<f64>().map_err(|e| bad(line, format!("{f:?}: {e}")))?);
        }
    }
    ProbabilityMatrix::new(ids, classes, values).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn write_matrix(path: &Path, pm: &ProbabilityMatrix) -> Result<()> {
    write_atomic(path, format_matrix(pm))
}

pub fn read_matrix(path: &Path) -> Result<ProbabilityMatrix> {
    parse_matrix(&read_text(path)?, path)
}
