//! Legacy ASCII VTK STRUCTURED_POINTS export for scalar fields.

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::Grid3D;
use ndarray::Array3;
use std::io::Write;
use std::path::Path;

/// Fraction of the field maximum recorded as the suggested isovalue.
pub const ISO_FRACTION: f64 = 0.1;

/// Write one or more named scalar blocks over the same grid.
pub fn write_blocks(path: &Path, grid: &Grid3D, blocks: &[(&str, &Array3<f64>)]) -> Result<()> {
    for (name, values) in blocks {
        if values.dim() != (grid.nx, grid.ny, grid.nz) {
            return Err(Error::Shape(format!(
                "block `{name}` shape {:?} does not match grid",
                values.dim()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value in block `{name}`")));
        }
    }
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    let io_err = |e| Error::io(path.display().to_string(), e);
    writeln!(file, "# vtk DataFile Version 3.0").map_err(io_err)?;
    writeln!(file, "dielscan scalar field").map_err(io_err)?;
    writeln!(file, "ASCII").map_err(io_err)?;
    writeln!(file, "DATASET STRUCTURED_POINTS").map_err(io_err)?;
    writeln!(file, "DIMENSIONS {} {} {}", grid.nx, grid.ny, grid.nz).map_err(io_err)?;
    writeln!(
        file,
        "ORIGIN {} {} {}",
        grid.origin[0], grid.origin[1], grid.origin[2]
    )
    .map_err(io_err)?;
    writeln!(
        file,
        "SPACING {} {} {}",
        grid.step[0], grid.step[1], grid.step[2]
    )
    .map_err(io_err)?;
    writeln!(file, "POINT_DATA {}", grid.node_count()).map_err(io_err)?;
    for (name, values) in blocks {
        writeln!(file, "SCALARS {name} double 1").map_err(io_err)?;
        writeln!(file, "LOOKUP_TABLE default").map_err(io_err)?;
        // VTK point order: x varies fastest, then y, then z.
        for s in 0..grid.nz {
            for q in 0..grid.ny {
                for p in 0..grid.nx {
                    writeln!(file, "{}", values[[p, q, s]]).map_err(io_err)?;
                }
            }
        }
    }
    Ok(())
}

/// Export a scalar field as a single `c_comp` block, with a companion
/// `<path>.meta.json` recording the maximum and the 10% isovalue.
pub fn export_scalar_field(field: &ScalarField, path: &Path) -> Result<()> {
    field.check_finite()?;
    write_blocks(path, &field.grid, &[("c_comp", &field.values)])?;
    let max = field.max();
    let meta = serde_json::json!({
        "field": "c_comp",
        "max": max,
        "isovalue": ISO_FRACTION * max,
    });
    let meta_path = path.with_extension(format!(
        "{}meta.json",
        path.extension()
            .map(|e| format!("{}.", e.to_string_lossy()))
            .unwrap_or_default()
    ));
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap())
        .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    Ok(())
}

/// Read back a legacy STRUCTURED_POINTS file written by [`write_blocks`].
pub fn read_blocks(path: &Path) -> Result<(Grid3D, Vec<(String, Array3<f64>)>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut dims = None;
    let mut origin = None;
    let mut spacing = None;
    let mut blocks: Vec<(String, Array3<f64>)> = Vec::new();
    let mut lines = text.lines().enumerate().peekable();

    let parse3 = |line: &str, line_no: usize| -> Result<[f64; 3]> {
        let toks: Vec<&str> = line.split_whitespace().skip(1).collect();
        if toks.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: "expected three values".into(),
            });
        }
        let mut out = [0.0; 3];
        for (slot, tok) in out.iter_mut().zip(&toks) {
            *slot = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("not a number: `{tok}`"),
            })?;
        }
        Ok(out)
    };

    while let Some((idx, raw)) = lines.next() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.starts_with("DIMENSIONS") {
            let v = parse3(line, line_no)?;
            dims = Some((v[0] as usize, v[1] as usize, v[2] as usize));
        } else if line.starts_with("ORIGIN") {
            origin = Some(parse3(line, line_no)?);
        } else if line.starts_with("SPACING") {
            spacing = Some(parse3(line, line_no)?);
        } else if line.starts_with("SCALARS") {
            let name = line
                .split_whitespace()
                .nth(1)
                .ok_or(Error::Parse {
                    line: line_no,
                    message: "SCALARS without a name".into(),
                })?
                .to_string();
            let (nx, ny, nz) = dims.ok_or(Error::Parse {
                line: line_no,
                message: "SCALARS before DIMENSIONS".into(),
            })?;
            // Skip LOOKUP_TABLE.
            lines.next();
            let mut values = Array3::zeros((nx, ny, nz));
            for s in 0..nz {
                for q in 0..ny {
                    for p in 0..nx {
                        let (vidx, vraw) = lines.next().ok_or(Error::Parse {
                            line: line_no,
                            message: "truncated scalar block".into(),
                        })?;
                        let v: f64 = vraw.trim().parse().map_err(|_| Error::Parse {
                            line: vidx + 1,
                            message: format!("not a number: `{vraw}`"),
                        })?;
                        if !v.is_finite() {
                            return Err(Error::Parse {
                                line: vidx + 1,
                                message: "non-finite value".into(),
                            });
                        }
                        values[[p, q, s]] = v;
                    }
                }
            }
            blocks.push((name, values));
        }
    }
    let (nx, ny, nz) = dims.ok_or(Error::Parse {
        line: 1,
        message: "missing DIMENSIONS".into(),
    })?;
    let origin = origin.unwrap_or([0.0; 3]);
    let spacing = spacing.unwrap_or([1.0; 3]);
    let grid = Grid3D {
        nx,
        ny,
        nz,
        origin,
        step: spacing,
    };
    Ok((grid, blocks))
}
