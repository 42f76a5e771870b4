//! Resident-set sampling for a process and all of its descendants.

/// Sum of RSS bytes over `root` and its descendants, or `None` where the
/// platform offers no way to sample it.
#[cfg(target_os = "linux")]
pub fn tree_rss_bytes(root: u32) -> Option<u64> {
    use std::collections::{HashMap, VecDeque};
    use std::fs;

    let page = page_size();
    let mut children: HashMap<u32, Vec<u32>> = HashMap::new();
    for entry in fs::read_dir("/proc").ok()?.flatten() {
        let Some(pid) = entry
            .file_name()
            .to_str()
            .and_then(|s| s.parse::<u32>().ok())
        else {
            continue;
        };
        if let Some(ppid) = fs::read_to_string(format!("/proc/{pid}/stat"))
            .ok()
            .as_deref()
            .and_then(parent_pid)
        {
            children.entry(ppid).or_default().push(pid);
        }
    }
    let mut total = 0u64;
    let mut queue = VecDeque::from([root]);
    while let Some(pid) = queue.pop_front() {
        if let Ok(statm) = fs::read_to_string(format!("/proc/{pid}/statm")) {
            let resident: u64 = statm
                .split_whitespace()
                .nth(1)
                .and_then(|v| v.parse().ok())
                .unwrap_or(0);
            total += resident * page;
        }
        if let Some(kids) = children.get(&pid) {
            queue.extend(kids);
        }
    }
    Some(total)
}

#[cfg(not(target_os = "linux"))]
pub fn tree_rss_bytes(_root: u32) -> Option<u64> {
    None
}

/// Field 4 of `/proc/<pid>/stat`; the command name may contain spaces or
/// parentheses, so parse after the last `)`.
#[cfg(target_os = "linux")]
fn parent_pid(stat: &str) -> Option<u32> {
    let rest = &stat[stat.rfind(')')? + 1..];
    rest.split_whitespace().nth(1)?.parse().ok()
}

#[cfg(target_os = "linux")]
fn page_size() -> u64 {
    // SAFETY: sysconf has no preconditions.
    let size = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if size > 0 {
        size as u64
    } else {
        4096
    }
}
