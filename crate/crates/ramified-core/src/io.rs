//! CSV import/export for graphs, fields, forms, measures and spectra.
//!
//! All files carry a header row and use `\n` line endings. Floats are
//! written with 17 significant digits (`{:.16e}`), which round-trips
//! `f64` exactly, so identical inputs always produce byte-identical
//! files.
//!
//! Formats:
//!
//! - vertices: `id,x,y,boundary_flag` (coordinates empty when the graph
//!   carries no embedding; `boundary_flag` is `0` or `1`);
//! - edges: `src,dst,conductance` in canonical orientation `src < dst`;
//! - scalar fields and measures: `vertex_id,value`;
//! - 1-forms: `src,dst,value` in canonical orientation;
//! - spectra: `index,eigenvalue`, sorted as produced by the solver.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{MeasureWeights, ScalarField};
use crate::forms::OneForm;
use crate::fractal::LevelGraph;

/// Format a float with 17 significant digits; round-trips `f64` exactly.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_error)
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("csv: {other:?}")),
    }
}

fn parse_index(raw: &str, what: &str, limit: usize) -> Result<usize> {
    let value: usize = raw
        .parse()
        .map_err(|_| Error::Parse(format!("{what} `{raw}` is not a vertex index")))?;
    if value >= limit {
        return Err(Error::Parse(format!(
            "{what} {value} out of range (graph has {limit} vertices)"
        )));
    }
    Ok(value)
}

fn parse_float(raw: &str, what: &str) -> Result<f64> {
    let value: f64 = raw
        .parse()
        .map_err(|_| Error::Parse(format!("{what} `{raw}` is not a number")))?;
    if !value.is_finite() {
        return Err(Error::Parse(format!("{what} `{raw}` is not finite")));
    }
    Ok(value)
}

/// Write the vertex table `id,x,y,boundary_flag`.
pub fn write_vertices(graph: &LevelGraph, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["id", "x", "y", "boundary_flag"]).map_err(csv_error)?;
    for v in 0..graph.vertex_count() {
        let (x, y) = match graph.coords() {
            Some(coords) => (format_float(coords[v][0]), format_float(coords[v][1])),
            None => (String::new(), String::new()),
        };
        let flag = if graph.is_boundary(v) { "1" } else { "0" };
        w.write_record([v.to_string(), x, y, flag.to_string()])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Write the edge table `src,dst,conductance`.
pub fn write_edges(graph: &LevelGraph, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["src", "dst", "conductance"]).map_err(csv_error)?;
    for e in graph.edges() {
        w.write_record([
            e.src.to_string(),
            e.dst.to_string(),
            format_float(e.conductance),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Write a scalar field as `vertex_id,value`.
pub fn write_field(field: &ScalarField, path: &Path) -> Result<()> {
    write_vertex_values(field.values().iter().copied(), path)
}

/// Write a measure as `vertex_id,value`.
pub fn write_measure(m: &MeasureWeights, path: &Path) -> Result<()> {
    write_vertex_values(m.values().iter().copied(), path)
}

fn write_vertex_values(values: impl Iterator<Item = f64>, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["vertex_id", "value"]).map_err(csv_error)?;
    for (v, value) in values.enumerate() {
        w.write_record([v.to_string(), format_float(value)])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a scalar field from `vertex_id,value` rows. Every vertex must
/// appear exactly once.
pub fn read_field(graph: &Arc<LevelGraph>, path: &Path) -> Result<ScalarField> {
    let mut values = vec![None; graph.vertex_count()];
    for record in reader(path)?.records() {
        let record = record.map_err(csv_error)?;
        if record.len() != 2 {
            return Err(Error::Parse(format!(
                "field row `{}` must have 2 columns",
                record.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let v = parse_index(&record[0], "vertex_id", graph.vertex_count())?;
        if values[v].is_some() {
            return Err(Error::Parse(format!("vertex {v} listed twice")));
        }
        values[v] = Some(parse_float(&record[1], "value")?);
    }
    let values: Vec<f64> = values
        .into_iter()
        .enumerate()
        .map(|(v, entry)| entry.ok_or_else(|| Error::Parse(format!("vertex {v} missing"))))
        .collect::<Result<_>>()?;
    ScalarField::new(graph, values)
}

/// Write a 1-form as `src,dst,value` in canonical orientation.
pub fn write_form(form: &OneForm, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["src", "dst", "value"]).map_err(csv_error)?;
    for (i, e) in form.graph().edges().iter().enumerate() {
        w.write_record([
            e.src.to_string(),
            e.dst.to_string(),
            format_float(form.value(i)),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a 1-form from `src,dst,value` rows. Rows may use either
/// orientation (the value is negated when `src > dst`); edges not listed
/// default to zero; an edge listed twice or absent from the graph is an
/// error.
pub fn read_form(graph: &Arc<LevelGraph>, path: &Path) -> Result<OneForm> {
    let mut values = vec![None; graph.edge_count()];
    for record in reader(path)?.records() {
        let record = record.map_err(csv_error)?;
        if record.len() != 3 {
            return Err(Error::Parse(format!(
                "form row `{}` must have 3 columns",
                record.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let src = parse_index(&record[0], "src", graph.vertex_count())?;
        let dst = parse_index(&record[1], "dst", graph.vertex_count())?;
        let raw = parse_float(&record[2], "value")?;
        let edge = graph.edge_position(src, dst).ok_or_else(|| {
            Error::Parse(format!("graph has no edge between {src} and {dst}"))
        })?;
        if values[edge].is_some() {
            return Err(Error::Parse(format!("edge ({src},{dst}) listed twice")));
        }
        values[edge] = Some(if src <= dst { raw } else { -raw });
    }
    OneForm::new(
        graph,
        values.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
    )
}

/// Write a spectrum as `index,eigenvalue` in the order given.
pub fn write_spectrum(values: &[f64], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["index", "eigenvalue"]).map_err(csv_error)?;
    for (i, value) in values.iter().enumerate() {
        w.write_record([i.to_string(), format_float(*value)])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
