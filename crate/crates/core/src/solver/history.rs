use std::io::Write;

/// One row of the convergence record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub gamma: f64,
    /// `‖ψ^{(m+1)} − ψ^{(m)}‖/‖ψ^{(m)}‖` over the whole stack.
    pub d_psi_norm: f64,
    /// `‖q^{(m+1)} − q^{(m)}‖/‖q^{(m)}‖`.
    pub d_q_norm: f64,
    pub wall_ms: f64,
}

/// Records of the initial point (`iter = 0`) and every iteration after it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<IterRecord>,
    /// Index of the first record of every multiscale level.
    pub level_starts: Vec<usize>,
}

impl History {
    pub const CSV_HEADER: &'static str = "iter,objective,gamma,d_psi_norm,d_q_norm,wall_ms";

    pub fn push(&mut self, r: IterRecord) {
        self.records.push(r);
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn last_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }

    pub fn is_monotone(&self) -> bool {
        self.records.windows(2).all(|w| w[1].objective <= w[0].objective)
    }

    pub fn csv_row(r: &IterRecord) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:.3}",
            r.iter, r.objective, r.gamma, r.d_psi_norm, r.d_q_norm, r.wall_ms
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(w, "{}", Self::csv_row(r))?;
        }
        Ok(())
    }
}
