//! Deterministic output formats: a self-describing binary container for
//! field snapshots and fixed-precision delimited text for time series.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};

/// Magic bytes of the field container format.
pub const MAGIC: [u8; 4] = *b"KCM1";
/// Format version.
pub const VERSION: u32 = 1;

/// One named field: a shaped array of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub shape: Vec<u64>,
    pub data: Vec<f64>,
}

impl Field {
    pub fn new(name: impl Into<String>, shape: Vec<u64>, data: Vec<f64>) -> Self {
        let f = Field { name: name.into(), shape, data };
        debug_assert_eq!(f.shape.iter().product::<u64>() as usize, f.data.len());
        f
    }
}

/// Self-describing container of named fields; writes are little-endian and
/// byte-reproducible for identical inputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FieldContainer {
    pub fields: Vec<Field>,
}

impl FieldContainer {
    pub fn push(&mut self, field: Field) {
        self.fields.push(field);
    }

    pub fn get(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Encode to bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(1); // little-endian payload flag
        out.extend_from_slice(&(self.fields.len() as u32).to_le_bytes());
        for field in &self.fields {
            let name = field.name.as_bytes();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            out.push(1); // element type: f64
            out.extend_from_slice(&(field.shape.len() as u32).to_le_bytes());
            for dim in &field.shape {
                out.extend_from_slice(&dim.to_le_bytes());
            }
            for v in &field.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Decode from bytes, validating the header.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
            if *cursor + n > bytes.len() {
                return Err(CoreError::ContainerFormat("unexpected end of data".into()));
            }
            let slice = &bytes[*cursor..*cursor + n];
            *cursor += n;
            Ok(slice)
        };
        if take(&mut cursor, 4)? != MAGIC {
            return Err(CoreError::ContainerFormat("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
        if version != VERSION {
            return Err(CoreError::ContainerFormat(format!("unsupported version {version}")));
        }
        if take(&mut cursor, 1)?[0] != 1 {
            return Err(CoreError::ContainerFormat("unsupported endianness flag".into()));
        }
        let count = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
        let mut fields = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut cursor, name_len)?.to_vec())
                .map_err(|_| CoreError::ContainerFormat("field name is not UTF-8".into()))?;
            if take(&mut cursor, 1)?[0] != 1 {
                return Err(CoreError::ContainerFormat("unsupported element type".into()));
            }
            let rank = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()));
            }
            let len = shape.iter().product::<u64>() as usize;
            let raw = take(&mut cursor, len * 8)?;
            let mut data = Vec::with_capacity(len);
            for chunk in raw.chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            fields.push(Field { name, shape, data });
        }
        if cursor != bytes.len() {
            return Err(CoreError::ContainerFormat("trailing bytes after last field".into()));
        }
        Ok(FieldContainer { fields })
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let mut file = std::fs::File::create(path).map_err(|e| CoreError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        file.write_all(&bytes).map_err(|e| CoreError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path).map_err(|e| CoreError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| CoreError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Format one value with 17 significant digits (round-trips f64 exactly).
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Render a rectangular time series as delimited text: one header line, one
/// line per row, newline-terminated, byte-deterministic for equal inputs.
pub fn write_timeseries(columns: &[&str], rows: &[Vec<f64>]) -> Result<String> {
    for (i, row) in rows.iter().enumerate() {
        if row.len() != columns.len() {
            return Err(CoreError::InvalidInput(format!(
                "row {i} has {} entries, expected {}",
                row.len(),
                columns.len()
            )));
        }
    }
    let mut out = String::new();
    out.push_str(&columns.join("\t"));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format_value(*v)).collect();
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    Ok(out)
}

/// Write text to a file, surfacing the path on failure.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CoreError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
