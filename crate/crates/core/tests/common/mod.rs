#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bench_core::auth::{AccessToken, Credentials, Scope};
use bench_core::fraction::Fraction;
use bench_core::reference;
use bench_core::registry::{Case, LabelCode, LabelSystem, LabeledCase};
use bench_core::task::{
    GradeThresholds, PerturbationPolicy, ResourceLimits, TaskDescriptor, TaskPolicy,
};

pub const ADMIN: &str = "admin-token";
pub const ALICE: &str = "alice-token";
pub const BOB: &str = "bob-token";

pub fn bench_exe() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_bench"))
}

pub fn tokens() -> Vec<AccessToken> {
    vec![
        AccessToken {
            token: ADMIN.into(),
            scope: Scope::Admin,
            participant_id: None,
        },
        AccessToken {
            token: ALICE.into(),
            scope: Scope::Participant,
            participant_id: Some("alice".into()),
        },
        AccessToken {
            token: BOB.into(),
            scope: Scope::Participant,
            participant_id: Some("bob".into()),
        },
    ]
}

pub fn credentials() -> Credentials {
    Credentials::new(tokens()).unwrap()
}

pub fn task(task_id: &str, labels: &[&str]) -> TaskDescriptor {
    TaskDescriptor {
        task_id: task_id.into(),
        label_system: LabelSystem::Triage,
        label_space: labels.iter().map(|s| s.to_string()).collect(),
        top_k: labels.len().min(2) as u32,
        limits: ResourceLimits {
            per_case_wall_ms: 2_000,
            total_wall_ms: 60_000,
            max_resident_bytes: 256 << 20,
        },
        perturbation: PerturbationPolicy { magnitude: 0.1 },
        thresholds: GradeThresholds::new(Fraction::new(1, 2), Fraction::new(9, 10)),
        human_gold_rate: None,
        policy: TaskPolicy::default(),
    }
}

pub fn case(id: &str, code: &str) -> LabeledCase {
    LabeledCase {
        case: Case {
            case_id: id.into(),
            features: BTreeMap::new(),
            subgroups: BTreeMap::new(),
        },
        gold: LabelCode {
            system: LabelSystem::Triage,
            code: code.into(),
        },
    }
}

/// Package directory running `bench model <args>`.
pub fn model_package(dir: &Path, name: &str, args: &[&str]) -> PathBuf {
    let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    reference::write_package(&dir.join(name), &bench_exe(), &args).unwrap()
}

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use bench_core::service::Platform;

/// API server plus one worker on a background runtime; stops on drop.
pub struct TestServer {
    pub base: String,
    pub platform: Arc<Platform>,
    stop: Arc<AtomicBool>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    threads: Vec<std::thread::JoinHandle<()>>,
}

impl TestServer {
    pub fn start(platform: Platform) -> Self {
        let platform = Arc::new(platform);
        let stop = Arc::new(AtomicBool::new(false));
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (shutdown_tx, shutdown_rx) = tokio::sync::oneshot::channel::<()>();
        let p = platform.clone();
        let server = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                bench_core::service::api::serve(p, listener, async {
                    let _ = shutdown_rx.await;
                })
                .await
                .unwrap();
            });
        });
        let (p, s) = (platform.clone(), stop.clone());
        let worker = std::thread::spawn(move || p.run_worker(&s, Duration::from_millis(20)));
        let addr = addr_rx.recv().unwrap();
        Self {
            base: format!("http://{addr}"),
            platform,
            stop,
            shutdown: Some(shutdown_tx),
            threads: vec![server, worker],
        }
    }

    pub fn client(&self, token: Option<&str>) -> bench_core::service::client::Client {
        bench_core::service::client::Client::new(self.base.clone(), token.map(str::to_string))
            .unwrap()
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}
