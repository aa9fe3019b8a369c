//! One test per shared invariant.

mod invariants;

#[test]
fn jump_time_monotonicity() {
    match invariants::jump_time_monotonicity() {
        Ok(msg) => println!("jump-time monotonicity: {msg}"),
        Err(e) => panic!("jump-time monotonicity: {e}"),
    }
}

#[test]
fn mu_cocycle() {
    match invariants::mu_cocycle() {
        Ok(msg) => println!("mu cocycle: {msg}"),
        Err(e) => panic!("mu cocycle: {e}"),
    }
}

#[test]
fn flow_guard_exclusive() {
    match invariants::flow_guard_exclusive() {
        Ok(msg) => println!("flow set and guard exclusive: {msg}"),
        Err(e) => panic!("flow set and guard exclusive: {e}"),
    }
}

#[test]
fn ball_energy_along_arcs() {
    match invariants::ball_energy_along_arcs() {
        Ok(msg) => println!("ball energy along arcs: {msg}"),
        Err(e) => panic!("ball energy along arcs: {e}"),
    }
}

#[test]
fn reset_consistency() {
    match invariants::reset_consistency() {
        Ok(msg) => println!("reset consistency: {msg}"),
        Err(e) => panic!("reset consistency: {e}"),
    }
}

#[test]
fn scc_soundness() {
    match invariants::scc_soundness() {
        Ok(msg) => println!("SCC soundness: {msg}"),
        Err(e) => panic!("SCC soundness: {e}"),
    }
}

#[test]
fn box_lyapunov_edge_property() {
    match invariants::box_lyapunov_edge_property() {
        Ok(msg) => println!("box Lyapunov edge property: {msg}"),
        Err(e) => panic!("box Lyapunov edge property: {e}"),
    }
}

#[test]
fn pair_duality() {
    match invariants::pair_duality() {
        Ok(msg) => println!("pair duality: {msg}"),
        Err(e) => panic!("pair duality: {e}"),
    }
}

#[test]
fn refinement_sandwich() {
    match invariants::refinement_sandwich() {
        Ok(msg) => println!("refinement sandwich: {msg}"),
        Err(e) => panic!("refinement sandwich: {e}"),
    }
}

#[test]
fn decomposition() {
    match invariants::decomposition() {
        Ok(msg) => println!("decomposition: {msg}"),
        Err(e) => panic!("decomposition: {e}"),
    }
}

#[test]
fn forward_invariance_proxy() {
    match invariants::forward_invariance_proxy() {
        Ok(msg) => println!("forward invariance proxy: {msg}"),
        Err(e) => panic!("forward invariance proxy: {e}"),
    }
}

#[test]
fn nice_chain_equivalence() {
    match invariants::nice_chain_equivalence() {
        Ok(msg) => println!("nice chain equivalence: {msg}"),
        Err(e) => panic!("nice chain equivalence: {e}"),
    }
}

#[test]
fn semigroup_law() {
    match invariants::semigroup_law() {
        Ok(msg) => println!("semigroup law: {msg}"),
        Err(e) => panic!("semigroup law: {e}"),
    }
}

#[test]
fn cylinder_exactness() {
    match invariants::cylinder_exactness() {
        Ok(msg) => println!("cylinder exactness: {msg}"),
        Err(e) => panic!("cylinder exactness: {e}"),
    }
}

#[test]
fn conjugacy() {
    match invariants::conjugacy() {
        Ok(msg) => println!("conjugacy: {msg}"),
        Err(e) => panic!("conjugacy: {e}"),
    }
}

#[test]
fn relaxation_gap() {
    match invariants::relaxation_gap() {
        Ok(msg) => println!("relaxation gap: {msg}"),
        Err(e) => panic!("relaxation gap: {e}"),
    }
}

#[test]
fn continuity_direction() {
    match invariants::continuity_direction() {
        Ok(msg) => println!("continuity direction: {msg}"),
        Err(e) => panic!("continuity direction: {e}"),
    }
}

#[test]
fn symbolic_numeric_agreement() {
    match invariants::symbolic_numeric_agreement() {
        Ok(msg) => println!("symbolic-numeric agreement: {msg}"),
        Err(e) => panic!("symbolic-numeric agreement: {e}"),
    }
}

#[test]
fn tower_linearity() {
    match invariants::tower_linearity() {
        Ok(msg) => println!("tower linearity: {msg}"),
        Err(e) => panic!("tower linearity: {e}"),
    }
}

#[test]
fn criterion_continuity_coherence() {
    match invariants::criterion_continuity_coherence() {
        Ok(msg) => println!("criterion/continuity coherence: {msg}"),
        Err(e) => panic!("criterion/continuity coherence: {e}"),
    }
}
