use pyo3::prelude::*;

#[pymodule]
fn motionmask_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
