//! Legacy VTK and CSV output.

use std::fmt::Write as _;
use std::io::Write;

use crate::driver::SqpTrace;
use crate::error::{Error, Result};
use crate::fem::NodalField;
use crate::mesh::TriMesh;
use crate::shape::{InterfaceField, InterfaceGeometry};

/// Seven significant digits, as used in every table and file.
pub fn sig7(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..7).contains(&exp) {
        let decimals = (6 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.6e}")
    }
}

/// ASCII legacy VTK unstructured grid with the subdomain label per cell
/// and any number of nodal fields.
pub fn vtk_string(mesh: &TriMesh, fields: &[(&str, &NodalField)]) -> Result<String> {
    for (_, f) in fields {
        f.check(mesh)?;
    }
    let mut s = String::new();
    let nv = mesh.num_vertices();
    let nt = mesh.num_triangles();
    s.push_str("# vtk DataFile Version 3.0\ninterface mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {nv} double");
    for p in mesh.vertices() {
        let _ = writeln!(s, "{} {} 0", p[0], p[1]);
    }
    let _ = writeln!(s, "CELLS {nt} {}", 4 * nt);
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }
    let _ = writeln!(s, "CELL_DATA {nt}\nSCALARS subdomain int 1\nLOOKUP_TABLE default");
    for &d in mesh.subdomains() {
        let _ = writeln!(s, "{}", d as u8);
    }
    if !fields.is_empty() {
        let _ = writeln!(s, "POINT_DATA {nv}");
        for (name, f) in fields {
            let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
            for v in &f.values {
                let _ = writeln!(s, "{v}");
            }
        }
    }
    Ok(s)
}

pub fn write_vtk(path: &std::path::Path, mesh: &TriMesh, fields: &[(&str, &NodalField)]) -> Result<()> {
    std::fs::write(path, vtk_string(mesh, fields)?)?;
    Ok(())
}

/// Interface polyline with one scalar per node: `y,x,nx,ny,kappa,value`.
pub fn interface_csv(mesh: &TriMesh, geometry: &InterfaceGeometry, field: &InterfaceField) -> Result<String> {
    let pts = mesh.interface_points();
    if field.len() != pts.len() || geometry.len() != pts.len() {
        return Err(Error::FieldLength {
            expected: pts.len(),
            found: field.len(),
        });
    }
    let mut s = String::from("y,x,nx,ny,kappa,value\n");
    for (i, p) in pts.iter().enumerate() {
        let n = geometry.normals[i];
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            p[1], p[0], n[0], n[1], geometry.curvature[i], field.values[i]
        );
    }
    Ok(s)
}

pub const TRACE_HEADER: &str = "level,iter,dist,J,grad_norm,cg_iters,alpha";

pub fn write_trace_rows(out: &mut impl Write, trace: &SqpTrace) -> Result<()> {
    for r in &trace.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.level,
            r.iter,
            sig7(r.dist),
            sig7(r.objective),
            sig7(r.grad_norm),
            r.cg_iters,
            sig7(r.alpha)
        )?;
    }
    Ok(())
}

pub fn trace_csv(traces: &[&SqpTrace]) -> Result<String> {
    let mut buf = Vec::new();
    writeln!(buf, "{TRACE_HEADER}")?;
    for t in traces {
        write_trace_rows(&mut buf, t)?;
    }
    Ok(String::from_utf8(buf).expect("ascii"))
}

/// Rows are iterations, columns are levels; missing entries print as `-`.
pub fn dist_table(traces: &[(usize, Option<&SqpTrace>)]) -> String {
    let rows = traces
        .iter()
        .filter_map(|(_, t)| t.map(|t| t.records.len()))
        .max()
        .unwrap_or(0);
    let mut s = String::from("iter");
    for (level, _) in traces {
        let _ = write!(s, "\tlevel {level}");
    }
    s.push('\n');
    for k in 0..rows {
        let _ = write!(s, "{k}");
        for (_, t) in traces {
            match t.and_then(|t| t.records.get(k)) {
                Some(r) => {
                    let _ = write!(s, "\t{}", sig7(r.dist));
                }
                None => s.push_str("\t-"),
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_template;
    use crate::shape::{compute_geometry, FieldRole};

    #[test]
    fn seven_significant_digits() {
        assert_eq!(sig7(0.0705945), "0.07059450");
        assert_eq!(sig7(10.0), "10.00000");
        assert_eq!(sig7(1.0 / 3.0), "0.3333333");
        assert_eq!(sig7(6.45e-5), "6.450000e-5");
        assert_eq!(sig7(0.0), "0");
    }

    #[test]
    fn vtk_layout() {
        let m = build_template(2).unwrap();
        let f = NodalField::from_fn(&m, |p| p[0]);
        let s = vtk_string(&m, &[("x", &f)]).unwrap();
        assert!(s.contains("POINTS 9 double"));
        assert!(s.contains("CELLS 8 32"));
        assert_eq!(s.lines().filter(|l| *l == "5").count(), 8);
        assert!(s.contains("POINT_DATA 9\nSCALARS x double 1"));
        let other = build_template(2).unwrap();
        assert!(vtk_string(&other, &[("x", &f)]).is_err());
    }

    #[test]
    fn interface_csv_rows() {
        let m = build_template(4).unwrap();
        let g = compute_geometry(&m).unwrap();
        let f = InterfaceField::zeros(FieldRole::Gradient, 5);
        let s = interface_csv(&m, &g, &f).unwrap();
        assert_eq!(s.lines().count(), 6);
        assert_eq!(s.lines().nth(1).unwrap(), "0,0.5,1,0,0,0");
    }
}
