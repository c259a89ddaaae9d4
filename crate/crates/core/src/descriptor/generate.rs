use rayon::prelude::*;

use super::{
    render_prompt2, CacheEntry, CacheKind, ChatRequest, DescribeCache, DescriptorError, ItemCatalog, MllmClient,
    Result, UserCatalog,
};
use crate::digest::sha256_hex;

/// Outcome of a batch generation pass.
#[derive(Debug, Default)]
pub struct DescribeReport {
    pub generated: usize,
    pub cached: usize,
    pub failures: Vec<(usize, DescriptorError)>,
}

impl DescribeReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

fn cached_or_generate(
    client: &MllmClient,
    cache: &DescribeCache,
    kind: CacheKind,
    index: usize,
    request: ChatRequest,
) -> Result<(String, bool)> {
    let prompt_hash = sha256_hex(request.prompt.as_bytes());
    if let Some(text) = cache.get(kind, index, client.model_name(), &prompt_hash) {
        return Ok((text, false));
    }
    let text = client.complete(&request)?;
    cache.put(CacheEntry {
        kind,
        index,
        model: client.model_name().to_string(),
        prompt_hash,
        text: text.clone(),
    })?;
    Ok((text, true))
}

fn item_request(item: usize, prompt: &str, image_ref: Option<&str>) -> Result<ChatRequest> {
    let image = image_ref
        .filter(|r| !r.trim().is_empty())
        .ok_or(DescriptorError::MissingImage(item))?;
    Ok(ChatRequest {
        prompt: prompt.to_string(),
        image: Some(image.to_string()),
    })
}

/// Description of one item image, served from the cache when present.
pub fn generate_item_description(
    client: &MllmClient,
    cache: &DescribeCache,
    prompt: &str,
    item: usize,
    image_ref: Option<&str>,
) -> Result<String> {
    let request = item_request(item, prompt, image_ref)?;
    cached_or_generate(client, cache, CacheKind::Item, item, request).map(|(t, _)| t)
}

/// Preference text for one user's behavior list, served from the cache when
/// present.
pub fn generate_user_preference(
    client: &MllmClient,
    cache: &DescribeCache,
    user: usize,
    behavior_list: &[String],
) -> Result<String> {
    let request = ChatRequest {
        prompt: render_prompt2(behavior_list)?,
        image: None,
    };
    cached_or_generate(client, cache, CacheKind::User, user, request).map(|(t, _)| t)
}

fn run_batch<F>(n: usize, concurrency: usize, job: F) -> (Vec<Option<String>>, DescribeReport)
where
    F: Fn(usize) -> Result<(String, bool)> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Result<(String, bool)>> = pool.install(|| (0..n).into_par_iter().map(&job).collect());
    let mut report = DescribeReport::default();
    let texts = results
        .into_iter()
        .enumerate()
        .map(|(i, r)| match r {
            Ok((text, fresh)) => {
                if fresh {
                    report.generated += 1;
                } else {
                    report.cached += 1;
                }
                Some(text)
            }
            Err(e) => {
                report.failures.push((i, e));
                None
            }
        })
        .collect();
    (texts, report)
}

/// Fills `semantic_desc` for every item; failures are reported, not fatal.
pub fn describe_items(
    client: &MllmClient,
    cache: &DescribeCache,
    prompt: &str,
    catalog: &mut ItemCatalog,
    concurrency: usize,
) -> DescribeReport {
    let entries = &catalog.entries;
    let (texts, report) = run_batch(entries.len(), concurrency, |i| {
        let request = item_request(i, prompt, entries[i].image())?;
        cached_or_generate(client, cache, CacheKind::Item, i, request)
    });
    for (entry, text) in catalog.entries.iter_mut().zip(texts) {
        if text.is_some() {
            entry.semantic_desc = text;
        }
    }
    report
}

/// Fills `preferences` for every user from their behavior lists.
pub fn describe_users(
    client: &MllmClient,
    cache: &DescribeCache,
    users: &mut UserCatalog,
    concurrency: usize,
) -> DescribeReport {
    let lists = &users.behavior_lists;
    let (texts, report) = run_batch(lists.len(), concurrency, |u| {
        let request = ChatRequest {
            prompt: render_prompt2(&lists[u])?,
            image: None,
        };
        cached_or_generate(client, cache, CacheKind::User, u, request)
    });
    users.preferences = texts;
    report
}
