use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-neuron state of the network at one time step.
///
/// All four vectors have identical length. `x` is the internal (grayscale)
/// state, `y` the slow inhibitory variable, `s` the output amplitude in
/// [0, 1] and `intensity` the camera intensity fed back on the next step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronArrays {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub intensity: Vec<f64>,
}

impl NeuronArrays {
    /// Fresh state with every variable at zero.
    pub fn zeroed(n: usize) -> Self {
        NeuronArrays {
            x: vec![0.0; n],
            y: vec![0.0; n],
            s: vec![0.0; n],
            intensity: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn check_consistent(&self) -> Result<()> {
        let n = self.x.len();
        for (len, context) in [
            (self.y.len(), "y length"),
            (self.s.len(), "s length"),
            (self.intensity.len(), "intensity length"),
        ] {
            if len != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: len,
                    context,
                });
            }
        }
        Ok(())
    }
}

/// Dense row-major record of the output amplitude over a simulation.
///
/// Row `t` holds `s(t+1)`, the state after consuming drive row `t`; a run of
/// `T` drive rows produces `T` trajectory rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn with_capacity(n: usize, steps: usize) -> Self {
        Trajectory {
            n,
            data: Vec::with_capacity(n * steps),
        }
    }

    pub fn from_rows(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() % n != 0 {
            return Err(Error::Dimension {
                expected: n,
                got: data.len(),
                context: "trajectory data not a multiple of row width",
            });
        }
        Ok(Trajectory { n, data })
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.n);
        self.data.extend_from_slice(row);
    }

    pub fn n_neurons(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.n..(t + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n)
    }

    /// Time series of a single neuron.
    pub fn neuron(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(i).step_by(self.n).copied()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeroed_state_is_consistent() {
        let st = NeuronArrays::zeroed(7);
        st.check_consistent().unwrap();
        assert_eq!(st.len(), 7);
        assert!(st.s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn detects_length_mismatch() {
        let mut st = NeuronArrays::zeroed(3);
        st.y.pop();
        assert!(st.check_consistent().is_err());
    }

    #[test]
    fn trajectory_row_access() {
        let mut tr = Trajectory::with_capacity(2, 3);
        tr.push_row(&[1.0, 2.0]);
        tr.push_row(&[3.0, 4.0]);
        assert_eq!(tr.len(), 2);
        assert_eq!(tr.row(1), &[3.0, 4.0]);
        let col: Vec<f64> = tr.neuron(1).collect();
        assert_eq!(col, vec![2.0, 4.0]);
    }
}
