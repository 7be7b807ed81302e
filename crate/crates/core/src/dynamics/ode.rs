use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

fn finite(tape: &Tape, v: Var) -> Result<Var> {
    if tape.value(v).is_finite() {
        Ok(v)
    } else {
        Err(Error::BlowUp { context: "rk4 step" })
    }
}

/// One classical fourth-order Runge-Kutta step of size `dt`, recorded on `tape`.
pub fn rk4_step<F>(tape: &mut Tape, x: Var, dt: f64, mut rhs: F) -> Result<Var>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let k1 = rhs(tape, x).and_then(|k| finite(tape, k))?;
    let d = tape.scale(k1, 0.5 * dt)?;
    let x2 = tape.add(x, d)?;
    let k2 = rhs(tape, x2).and_then(|k| finite(tape, k))?;
    let d = tape.scale(k2, 0.5 * dt)?;
    let x3 = tape.add(x, d)?;
    let k3 = rhs(tape, x3).and_then(|k| finite(tape, k))?;
    let d = tape.scale(k3, dt)?;
    let x4 = tape.add(x, d)?;
    let k4 = rhs(tape, x4).and_then(|k| finite(tape, k))?;

    let mid = tape.add(k2, k3)?;
    let mid = tape.scale(mid, 2.0)?;
    let acc = tape.add(k1, mid)?;
    let acc = tape.add(acc, k4)?;
    let inc = tape.scale(acc, dt / 6.0)?;
    let out = tape.add(x, inc)?;
    finite(tape, out)
}
