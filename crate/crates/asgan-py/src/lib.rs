use pyo3::prelude::*;

#[pymodule]
fn asgan(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
