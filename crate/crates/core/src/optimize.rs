use crate::circuit::Circuit;
use crate::gate::Gate;

/// Cancels pairs of identical self-inverse gates until a fixpoint.
///
/// A pair cancels when no gate between them touches any of their qubits;
/// gates on disjoint qubits commute past each other. The unitary is unchanged.
pub fn optimize_circuit(circuit: &Circuit) -> Circuit {
    let mut gates: Vec<Gate> = circuit.gates().to_vec();
    while let Some((i, j)) = find_cancelling_pair(&gates) {
        gates.remove(j);
        gates.remove(i);
    }
    Circuit::new(circuit.num_qubits(), gates).expect("subset of a valid circuit")
}

fn find_cancelling_pair(gates: &[Gate]) -> Option<(usize, usize)> {
    for (i, g) in gates.iter().enumerate() {
        for (j, h) in gates.iter().enumerate().skip(i + 1) {
            if h.overlaps(g) {
                if h == g {
                    return Some((i, j));
                }
                break;
            }
        }
    }
    None
}

/// True when [`optimize_circuit`] would leave the circuit unchanged.
pub fn is_optimized(circuit: &Circuit) -> bool {
    find_cancelling_pair(circuit.gates()).is_none()
}
