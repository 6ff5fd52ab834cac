use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

type Task = Box<dyn FnOnce() + Send + 'static>;

/// FIFO of tasks run by an explicit driver, for deterministic schedules.
#[derive(Default)]
pub struct TaskQueue {
    tasks: Mutex<VecDeque<Task>>,
}

impl TaskQueue {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn push(&self, f: Task) {
        self.tasks.lock().unwrap().push_back(f);
    }

    /// Runs tasks in FIFO order, including ones they enqueue, until none
    /// are left. Returns how many ran.
    pub fn run_until_idle(&self) -> usize {
        let mut n = 0;
        loop {
            let next = self.tasks.lock().unwrap().pop_front();
            match next {
                Some(f) => {
                    f();
                    n += 1;
                }
                None => return n,
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.lock().unwrap().is_empty()
    }
}

struct Shared {
    queue: Mutex<(VecDeque<Task>, bool)>,
    ready: Condvar,
}

/// Fixed set of OS threads for tasks that may block on locks. These threads
/// are not fork/join workers, so a parked task never sits beneath another
/// task's stolen frame.
pub struct Executor {
    shared: Arc<Shared>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl Executor {
    pub fn new(threads: usize) -> Arc<Self> {
        let shared = Arc::new(Shared {
            queue: Mutex::new((VecDeque::new(), false)),
            ready: Condvar::new(),
        });
        let handles = (0..threads.max(1))
            .map(|i| {
                let shared = Arc::clone(&shared);
                std::thread::Builder::new()
                    .name(format!("pfs-exec-{i}"))
                    .spawn(move || loop {
                        let task = {
                            let mut q = shared.queue.lock().unwrap();
                            loop {
                                if let Some(t) = q.0.pop_front() {
                                    break Some(t);
                                }
                                if q.1 {
                                    break None;
                                }
                                q = shared.ready.wait(q).unwrap();
                            }
                        };
                        match task {
                            Some(t) => t(),
                            None => return,
                        }
                    })
                    .expect("spawn executor thread")
            })
            .collect();
        Arc::new(Executor {
            shared,
            threads: Mutex::new(handles),
        })
    }

    pub fn spawn(&self, f: Task) {
        self.shared.queue.lock().unwrap().0.push_back(f);
        self.shared.ready.notify_one();
    }
}

impl Drop for Executor {
    fn drop(&mut self) {
        self.shared.queue.lock().unwrap().1 = true;
        self.shared.ready.notify_all();
        let me = std::thread::current().id();
        for h in self.threads.lock().unwrap().drain(..) {
            if h.thread().id() != me {
                let _ = h.join();
            }
        }
    }
}

/// Where reactivated procedures and forked deliveries run.
#[derive(Clone)]
pub enum Spawner {
    /// Shared executor threads.
    Executor(Arc<Executor>),
    /// Deferred until the owner drives the queue.
    Queue(Arc<TaskQueue>),
    /// A fresh OS thread per task.
    Thread,
}

impl Spawner {
    pub fn spawn<F: FnOnce() + Send + 'static>(&self, f: F) {
        match self {
            Spawner::Executor(e) => e.spawn(Box::new(f)),
            Spawner::Queue(q) => q.push(Box::new(f)),
            Spawner::Thread => {
                std::thread::spawn(f);
            }
        }
    }
}

/// A one-shot result slot a caller can block on.
pub struct Pending<T> {
    slot: Mutex<Option<T>>,
    ready: Condvar,
}

impl<T> Default for Pending<T> {
    fn default() -> Self {
        Pending {
            slot: Mutex::new(None),
            ready: Condvar::new(),
        }
    }
}

impl<T> Pending<T> {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn fulfill(&self, v: T) {
        let mut s = self.slot.lock().unwrap();
        assert!(s.is_none(), "result delivered twice");
        *s = Some(v);
        self.ready.notify_all();
    }

    pub fn is_ready(&self) -> bool {
        self.slot.lock().unwrap().is_some()
    }

    pub fn wait(&self) -> T {
        let mut s = self.slot.lock().unwrap();
        loop {
            if let Some(v) = s.take() {
                return v;
            }
            s = self.ready.wait(s).unwrap();
        }
    }

    /// Like [`wait`](Self::wait), giving up after `timeout`.
    pub fn wait_timeout(&self, timeout: std::time::Duration) -> Option<T> {
        let deadline = std::time::Instant::now() + timeout;
        let mut s = self.slot.lock().unwrap();
        loop {
            if let Some(v) = s.take() {
                return Some(v);
            }
            let left = deadline.checked_duration_since(std::time::Instant::now())?;
            s = self.ready.wait_timeout(s, left).unwrap().0;
        }
    }

    pub fn try_take(&self) -> Option<T> {
        self.slot.lock().unwrap().take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn queue_runs_nested_tasks_in_order() {
        let q = TaskQueue::new();
        let log = Arc::new(Mutex::new(Vec::new()));
        let (q2, l1) = (q.clone(), log.clone());
        q.push(Box::new(move || {
            l1.lock().unwrap().push(1);
            let l3 = l1.clone();
            q2.push(Box::new(move || l3.lock().unwrap().push(3)));
        }));
        let l2 = log.clone();
        q.push(Box::new(move || l2.lock().unwrap().push(2)));
        assert_eq!(q.run_until_idle(), 3);
        assert_eq!(*log.lock().unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn executor_runs_everything() {
        let e = Executor::new(3);
        let n = Arc::new(AtomicUsize::new(0));
        let done = Pending::new();
        for i in 0..100 {
            let (n, done) = (n.clone(), done.clone());
            e.spawn(Box::new(move || {
                if n.fetch_add(1, Ordering::SeqCst) == 99 {
                    done.fulfill(i);
                }
            }));
        }
        done.wait();
        assert_eq!(n.load(Ordering::SeqCst), 100);
    }
}
