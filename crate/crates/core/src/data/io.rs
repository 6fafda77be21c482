use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Read a dataset CSV: header `f1,...,fd,label`, one instance per row.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

pub fn read_csv<T: Scalar, R: Read>(reader: R) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(0, "header", e.to_string()))?
        .clone();
    if header.len() < 2 {
        return Err(parse_err(0, "header", "need at least one feature and a label column"));
    }
    let dim = header.len() - 1;
    if &header[dim] != "label" {
        return Err(parse_err(0, &header[dim], "last column must be `label`"));
    }
    let names: Vec<String> = header.iter().take(dim).map(str::to_owned).collect();

    let mut flat: Vec<T> = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| parse_err(row, "-", e.to_string()))?;
        if record.len() != dim + 1 {
            return Err(parse_err(
                row,
                "-",
                format!("expected {} fields, found {}", dim + 1, record.len()),
            ));
        }
        for (j, field) in record.iter().take(dim).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(row, &names[j], format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(row, &names[j], format!("`{field}` is not finite")));
            }
            flat.push(T::of(v));
        }
        let label = match record[dim].parse::<f64>() {
            Ok(v) if v == 0.0 => 0,
            Ok(v) if v == 1.0 => 1,
            _ => {
                return Err(parse_err(
                    row,
                    "label",
                    format!("label `{}` is not 0 or 1", &record[dim]),
                ))
            }
        };
        labels.push(label);
    }
    let features = Array2::from_shape_vec((labels.len(), dim), flat)
        .map_err(|e| Error::Dimension(e.to_string()))?;
    Dataset::new(features, labels, Some(names))
}

/// Write a dataset in the CSV layout accepted by [`load_csv`]. Reals are
/// printed in shortest round-trip form.
pub fn write_csv<T: Scalar>(data: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_csv_to(data, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_csv_to<T: Scalar, W: Write>(data: &Dataset<T>, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{},label", data.feature_names().join(","))?;
    let mut line = String::new();
    for (row, &label) in data.features().rows().into_iter().zip(data.labels()) {
        line.clear();
        for v in row {
            line.push_str(&format!("{v},"));
        }
        line.push_str(if label == 1 { "1" } else { "0" });
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn parse_err(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        column: column.to_owned(),
        message: message.into(),
    }
}
