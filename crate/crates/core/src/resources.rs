//! Node occupancy tracking.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{JobId, NodeId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AllocError {
    #[error("job {job} needs {requested} nodes but only {free} are free")]
    InsufficientNodes { job: JobId, requested: usize, free: usize },
    #[error("node {node} requested by job {job} is held by job {occupant}")]
    NodeConflict { node: NodeId, job: JobId, occupant: JobId },
    #[error("node {node} requested by job {job} is outside the pool of {total}")]
    NodeOutOfRange { node: NodeId, job: JobId, total: usize },
    #[error("job {0} holds no nodes")]
    UnknownJob(JobId),
    #[error("job {0} is already placed")]
    AlreadyPlaced(JobId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodePool {
    total: usize,
    occupied: BTreeMap<NodeId, JobId>,
    free: BTreeSet<NodeId>,
    by_job: BTreeMap<JobId, Vec<NodeId>>,
}

impl NodePool {
    pub fn new(total: usize) -> Self {
        NodePool {
            total,
            occupied: BTreeMap::new(),
            free: (0..total).collect(),
            by_job: BTreeMap::new(),
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.len()
    }

    pub fn free_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.free.iter().copied()
    }

    pub fn occupant(&self, node: NodeId) -> Option<JobId> {
        self.occupied.get(&node).copied()
    }

    pub fn nodes_of(&self, job: JobId) -> Option<&[NodeId]> {
        self.by_job.get(&job).map(Vec::as_slice)
    }

    /// Place `job` on `explicit` nodes, or on the lowest-numbered free nodes.
    pub fn allocate(
        &mut self,
        job: JobId,
        count: usize,
        explicit: Option<&[NodeId]>,
    ) -> Result<Vec<NodeId>, AllocError> {
        if self.by_job.contains_key(&job) {
            return Err(AllocError::AlreadyPlaced(job));
        }
        let nodes = match explicit {
            Some(list) => {
                for &node in list {
                    if node >= self.total {
                        return Err(AllocError::NodeOutOfRange {
                            node,
                            job,
                            total: self.total,
                        });
                    }
                    if let Some(&occupant) = self.occupied.get(&node) {
                        return Err(AllocError::NodeConflict { node, job, occupant });
                    }
                }
                list.to_vec()
            }
            None => {
                if self.free.len() < count {
                    return Err(AllocError::InsufficientNodes {
                        job,
                        requested: count,
                        free: self.free.len(),
                    });
                }
                self.free.iter().take(count).copied().collect()
            }
        };
        for &node in &nodes {
            self.free.remove(&node);
            self.occupied.insert(node, job);
        }
        self.by_job.insert(job, nodes.clone());
        Ok(nodes)
    }

    /// Free every node held by `job`.
    pub fn release(&mut self, job: JobId) -> Result<Vec<NodeId>, AllocError> {
        let nodes = self.by_job.remove(&job).ok_or(AllocError::UnknownJob(job))?;
        for &node in &nodes {
            self.occupied.remove(&node);
            self.free.insert(node);
        }
        Ok(nodes)
    }

    #[cfg(test)]
    fn consistent(&self) -> bool {
        self.occupied.len() + self.free.len() == self.total
            && self.occupied.keys().all(|n| !self.free.contains(n) && *n < self.total)
            && self.free.iter().all(|n| *n < self.total)
            && self.by_job.values().map(Vec::len).sum::<usize>() == self.occupied.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lowest_free_first() {
        let mut pool = NodePool::new(4);
        assert_eq!(pool.allocate(JobId(1), 2, None).unwrap(), vec![0, 1]);
    }

    #[test]
    fn explicit_placement_kept_in_given_order() {
        let mut pool = NodePool::new(4);
        assert_eq!(pool.allocate(JobId(1), 2, Some(&[3, 1])).unwrap(), vec![3, 1]);
        assert_eq!(pool.free_nodes().collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn explicit_conflict_names_node() {
        let mut pool = NodePool::new(4);
        pool.allocate(JobId(1), 2, None).unwrap();
        assert_eq!(
            pool.allocate(JobId(2), 1, Some(&[1])),
            Err(AllocError::NodeConflict {
                node: 1,
                job: JobId(2),
                occupant: JobId(1)
            })
        );
    }

    #[test]
    fn insufficient_nodes() {
        let mut pool = NodePool::new(2);
        assert!(matches!(
            pool.allocate(JobId(1), 3, None),
            Err(AllocError::InsufficientNodes {
                requested: 3,
                free: 2,
                ..
            })
        ));
    }

    #[test]
    fn release_returns_nodes_and_reuses_lowest() {
        let mut pool = NodePool::new(4);
        pool.allocate(JobId(1), 2, None).unwrap();
        pool.allocate(JobId(2), 1, None).unwrap();
        assert_eq!(pool.release(JobId(1)).unwrap(), vec![0, 1]);
        assert_eq!(pool.allocate(JobId(3), 2, None).unwrap(), vec![0, 1]);
        assert_eq!(pool.release(JobId(9)), Err(AllocError::UnknownJob(JobId(9))));
    }

    proptest! {
        #[test]
        fn pool_stays_consistent(ops in proptest::collection::vec((any::<bool>(), 0u64..6, 1usize..4), 1..60)) {
            let mut a = NodePool::new(8);
            let mut b = NodePool::new(8);
            for (alloc, id, count) in ops {
                let (ra, rb) = if alloc {
                    (a.allocate(JobId(id), count, None), b.allocate(JobId(id), count, None))
                } else {
                    (a.release(JobId(id)), b.release(JobId(id)))
                };
                prop_assert_eq!(ra, rb);
                prop_assert!(a.consistent());
                prop_assert!(a.occupied_count() <= a.total());
            }
            prop_assert_eq!(a, b);
        }
    }
}
