//! Leave-one-session-out fold plans.

use serde::{Deserialize, Serialize};

use super::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_index: usize,
    pub test_session: u32,
    /// Training session held out for fusion statistics and weight search.
    pub validation_session: Option<u32>,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// One fold per session. Fold `i` tests on the `i`-th session (sorted) and
/// holds out the next session cyclically as validation. With only two
/// sessions that would leave no training data, so validation is empty.
pub fn loso_folds(manifest: &DatasetManifest) -> Result<Vec<FoldPlan>> {
    let sessions = manifest.sessions();
    if sessions.len() < 2 {
        return Err(Error::input(format!(
            "leave-one-session-out needs at least 2 sessions, found {}",
            sessions.len()
        )));
    }
    let k = sessions.len();
    Ok(sessions
        .iter()
        .enumerate()
        .map(|(i, &test_session)| {
            let validation_session = (k > 2).then(|| sessions[(i + 1) % k]);
            let mut plan = FoldPlan {
                fold_index: i,
                test_session,
                validation_session,
                train: Vec::new(),
                validation: Vec::new(),
                test: Vec::new(),
            };
            for e in &manifest.entries {
                let bucket = if e.session == test_session {
                    &mut plan.test
                } else if Some(e.session) == validation_session {
                    &mut plan.validation
                } else {
                    &mut plan.train
                };
                bucket.push(e.id.clone());
            }
            plan
        })
        .collect())
}
