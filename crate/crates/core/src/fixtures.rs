//! Canonical joint tables shipped with the crate.

use crate::dist::{JointTable, VariableSpec};

fn bits() -> Vec<VariableSpec> {
    ["X", "Y", "Z"]
        .into_iter()
        .map(|n| VariableSpec::new(n, ["0", "1"]).expect("valid bit variable"))
        .collect()
}

/// F1: three independent fair bits, every cell 1/8.
pub fn independent_bits() -> JointTable {
    JointTable::new(bits(), vec![0.125; 8]).expect("F1 is normalized")
}

/// F3: noisy copy. `Y` is a fair bit independent of `(X, Z)`, and
/// `P(x, z | y)` is 0.4 when `x = z` and 0.1 otherwise.
pub fn noisy_copy() -> JointTable {
    let mut mass = Vec::with_capacity(8);
    for x in 0..2 {
        for _y in 0..2 {
            for z in 0..2 {
                mass.push(if x == z { 0.2 } else { 0.05 });
            }
        }
    }
    JointTable::new(bits(), mass).expect("F3 is normalized")
}
