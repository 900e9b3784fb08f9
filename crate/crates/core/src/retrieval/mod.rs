//! Caption/video ranking, reranking, retrieval metrics and highlight export.

pub mod highlight;

use std::fmt;

pub use highlight::{highlight, upsample, HighlightExport, HighlightRequest, Interp};

use crate::data::Dataset;
use crate::encoders::PartOfSpeech;
use crate::error::{Error, Result};
use crate::model::Model;

/// `a·b / (max(‖a‖,ε)·max(‖b‖,ε))`, matching the training-time similarity.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let eps = 1e-12;
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(eps);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(eps);
    a.iter().zip(b).map(|(x, y)| (x / na) * (y / nb)).sum()
}

/// Unit-length mean of `vectors`, or `None` when there are none.
pub fn mean_normalized(vectors: &[Vec<f64>]) -> Option<Vec<f64>> {
    let first = vectors.first()?;
    let mut m = vec![0.0; first.len()];
    for v in vectors {
        for (a, b) in m.iter_mut().zip(v) {
            *a += b;
        }
    }
    let n = vectors.len() as f64;
    m.iter_mut().for_each(|x| *x /= n);
    let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    m.iter_mut().for_each(|x| *x /= norm);
    Some(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    CaptionToVideo,
    VideoToCaption,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::CaptionToVideo => "caption_to_video",
            Direction::VideoToCaption => "video_to_caption",
        }
    }
}

/// Per-query candidate lists, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingTable {
    pub direction: Direction,
    /// `queries[q]` holds `(candidate, score)` sorted by descending score,
    /// ties by ascending candidate index.
    pub queries: Vec<Vec<(usize, f64)>>,
}

impl RankingTable {
    /// Orders every row of `scores[query][candidate]`.
    pub fn from_scores(direction: Direction, scores: &[Vec<f64>]) -> Self {
        let queries = scores
            .iter()
            .map(|row| {
                let mut r: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
                // `+ 0.0` folds -0.0 into 0.0 so that equal scores tie.
                r.sort_by(|a, b| (b.1 + 0.0).total_cmp(&(a.1 + 0.0)).then(a.0.cmp(&b.0)));
                r
            })
            .collect();
        RankingTable { direction, queries }
    }

    /// 1-based rank of the best-placed positive for each query.
    pub fn best_ranks(&self, positives: &[Vec<usize>]) -> Result<Vec<usize>> {
        if positives.len() != self.queries.len() {
            return Err(Error::input(format!(
                "{} queries but {} positive lists",
                self.queries.len(),
                positives.len()
            )));
        }
        self.queries
            .iter()
            .zip(positives)
            .enumerate()
            .map(|(q, (row, pos))| {
                row.iter()
                    .position(|(c, _)| pos.contains(c))
                    .map(|r| r + 1)
                    .ok_or_else(|| Error::input(format!("query {q} has no positive candidate")))
            })
            .collect()
    }
}

/// Transposes a `[video][caption]` score matrix.
pub fn transpose(scores: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = scores.first().map_or(0, Vec::len);
    (0..cols).map(|j| scores.iter().map(|row| row[j]).collect()).collect()
}

/// Cosine scores `[video][caption]` between joint embeddings.
pub fn similarity_matrix(videos: &[Vec<f64>], captions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if videos.is_empty() || captions.is_empty() {
        return Err(Error::input("ranking needs at least one video and one caption"));
    }
    let d = videos[0].len();
    if videos.iter().chain(captions).any(|v| v.len() != d) {
        return Err(Error::input("embeddings have different dimensions"));
    }
    Ok(videos
        .iter()
        .map(|v| captions.iter().map(|c| cosine(v, c)).collect())
        .collect())
}

/// Ranks captions for each video or videos for each caption.
pub fn rank(videos: &[Vec<f64>], captions: &[Vec<f64>], direction: Direction) -> Result<RankingTable> {
    let s = similarity_matrix(videos, captions)?;
    Ok(match direction {
        Direction::VideoToCaption => RankingTable::from_scores(direction, &s),
        Direction::CaptionToVideo => RankingTable::from_scores(direction, &transpose(&s)),
    })
}

/// Everything needed to score every (video, caption) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub video_joint: Vec<Vec<f64>>,
    /// Mean-pooled motion volume per video.
    pub video_motion: Vec<Vec<f64>>,
    /// Mean-pooled visual volume per video.
    pub video_visual: Vec<Vec<f64>>,
    pub caption_joint: Vec<Vec<f64>>,
    /// Normalized mean of a caption's verb embeddings, if it has verbs.
    pub caption_verbs: Vec<Option<Vec<f64>>>,
    /// Normalized mean of a caption's noun embeddings, if it has nouns.
    pub caption_nouns: Vec<Option<Vec<f64>>>,
}

impl Embeddings {
    /// Joint scores `[video][caption]`.
    pub fn joint_scores(&self) -> Result<Vec<Vec<f64>>> {
        similarity_matrix(&self.video_joint, &self.caption_joint)
    }

    /// Joint scores plus pooled motion/verb and visual/noun similarities.
    /// A caption without tokens of one tag gets 0 for that term.
    pub fn reranked_scores(&self) -> Result<Vec<Vec<f64>>> {
        let base = self.joint_scores()?;
        if self.video_motion.len() != base.len()
            || self.video_visual.len() != base.len()
            || self.caption_verbs.len() != self.caption_joint.len()
            || self.caption_nouns.len() != self.caption_joint.len()
        {
            return Err(Error::input("reranking inputs do not line up with the base scores"));
        }
        Ok(base
            .iter()
            .enumerate()
            .map(|(m, row)| {
                row.iter()
                    .enumerate()
                    .map(|(n, &s)| {
                        let mot = self.caption_verbs[n]
                            .as_ref()
                            .map_or(0.0, |c| cosine(&self.video_motion[m], c));
                        let vis = self.caption_nouns[n]
                            .as_ref()
                            .map_or(0.0, |c| cosine(&self.video_visual[m], c));
                        s + mot + vis
                    })
                    .collect()
            })
            .collect())
    }

    pub fn table(&self, direction: Direction, reranked: bool) -> Result<RankingTable> {
        let s = if reranked {
            self.reranked_scores()?
        } else {
            self.joint_scores()?
        };
        Ok(match direction {
            Direction::VideoToCaption => RankingTable::from_scores(direction, &s),
            Direction::CaptionToVideo => RankingTable::from_scores(direction, &transpose(&s)),
        })
    }
}

/// Mean verb and mean noun embedding; `None` when a caption has no token of that tag.
pub type TokenMeans = (Option<Vec<f64>>, Option<Vec<f64>>);

/// Token embeddings averaged per tag for one caption.
pub fn caption_token_means(model: &Model<f64>, verbs: &[usize], nouns: &[usize]) -> Result<TokenMeans> {
    let embed = |ids: &[usize], pos| -> Result<Vec<Vec<f64>>> {
        ids.iter()
            .map(|&t| Ok(model.token_embedding(t, pos)?.vector.into_data()))
            .collect()
    };
    Ok((
        mean_normalized(&embed(verbs, PartOfSpeech::Verb)?),
        mean_normalized(&embed(nouns, PartOfSpeech::Noun)?),
    ))
}

/// Embeds every video and caption of a dataset.
pub fn embed_dataset(model: &Model<f64>, data: &Dataset<f64>) -> Result<Embeddings> {
    let mut e = Embeddings {
        video_joint: Vec::with_capacity(data.videos.len()),
        video_motion: Vec::with_capacity(data.videos.len()),
        video_visual: Vec::with_capacity(data.videos.len()),
        caption_joint: Vec::with_capacity(data.captions.len()),
        caption_verbs: Vec::with_capacity(data.captions.len()),
        caption_nouns: Vec::with_capacity(data.captions.len()),
    };
    for v in &data.videos {
        let ve = model.video_embedding(&v.slow, &v.fast)?;
        e.video_joint.push(ve.joint.into_data());
        e.video_motion.push(ve.motion.into_data());
        e.video_visual.push(ve.visual.into_data());
    }
    for c in &data.captions {
        e.caption_joint
            .push(model.caption_embedding(&c.tokens)?.vector.into_data());
        let (verbs, nouns) = caption_token_means(model, &c.verbs, &c.nouns)?;
        e.caption_verbs.push(verbs);
        e.caption_nouns.push(nouns);
    }
    Ok(e)
}

/// Positive candidates per query for a dataset, in the given direction.
pub fn dataset_positives(data: &Dataset<f64>, direction: Direction) -> Vec<Vec<usize>> {
    match direction {
        Direction::CaptionToVideo => data.captions.iter().map(|c| vec![c.video]).collect(),
        Direction::VideoToCaption => data.videos.iter().map(|v| v.captions.clone()).collect(),
    }
}

/// One hit of a free-text query.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub rank: usize,
    pub video_id: String,
    pub score: f64,
}

/// Ranks the videos of `index` for a whitespace-tokenized query.
///
/// Tokens missing from `vocab` are skipped with a warning. The joint score
/// is reranked with the query's verbs and nouns when `rerank` is set.
pub fn search(
    model: &Model<f64>,
    vocab: &crate::encoders::Vocabulary,
    index: &Dataset<f64>,
    query: &str,
    topk: usize,
    rerank: bool,
) -> Result<Vec<SearchHit>> {
    let mut tokens = Vec::new();
    let (mut verbs, mut nouns) = (Vec::new(), Vec::new());
    for word in query.split_whitespace() {
        match vocab.lookup(word) {
            Some((id, pos)) => {
                tokens.push(id);
                match pos {
                    PartOfSpeech::Verb => verbs.push(id),
                    PartOfSpeech::Noun => nouns.push(id),
                    PartOfSpeech::Other => {}
                }
            }
            None => log::warn!("query token {word:?} is not in the vocabulary; skipped"),
        }
    }
    if tokens.is_empty() {
        return Err(Error::input(format!(
            "no query token of {query:?} is in the vocabulary"
        )));
    }
    let caption = model.caption_embedding(&tokens)?.vector.into_data();
    let (verb_mean, noun_mean) = if rerank {
        caption_token_means(model, &verbs, &nouns)?
    } else {
        (None, None)
    };
    let mut scores = Vec::with_capacity(index.videos.len());
    for v in &index.videos {
        let e = model.video_embedding(&v.slow, &v.fast)?;
        let mut s = cosine(e.joint.data(), &caption);
        if let Some(c) = &verb_mean {
            s += cosine(e.motion.data(), c);
        }
        if let Some(c) = &noun_mean {
            s += cosine(e.visual.data(), c);
        }
        scores.push(s);
    }
    let table = RankingTable::from_scores(Direction::CaptionToVideo, &[scores]);
    Ok(table.queries[0]
        .iter()
        .take(topk)
        .enumerate()
        .map(|(r, &(v, score))| SearchHit {
            rank: r + 1,
            video_id: index.videos[v].id.clone(),
            score,
        })
        .collect())
}

/// How the median of an even number of ranks is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MedianRule {
    /// Lower of the two middle values.
    #[default]
    Lower,
    /// Mean of the two middle values.
    Midpoint,
}

impl MedianRule {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lower" => Some(MedianRule::Lower),
            "midpoint" => Some(MedianRule::Midpoint),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MedianRule::Lower => "lower",
            MedianRule::Midpoint => "midpoint",
        }
    }
}

pub fn median_rank(ranks: &[usize], rule: MedianRule) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::input("median of no ranks"));
    }
    let mut r = ranks.to_vec();
    r.sort_unstable();
    let n = r.len();
    Ok(if n % 2 == 1 {
        r[n / 2] as f64
    } else {
        match rule {
            MedianRule::Lower => r[n / 2 - 1] as f64,
            MedianRule::Midpoint => (r[n / 2 - 1] + r[n / 2]) as f64 / 2.0,
        }
    })
}

/// Recall at 1/5/10 and median rank for one table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub direction: Direction,
    pub reranked: bool,
    pub queries: usize,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub median_rank: f64,
    pub median_rule: MedianRule,
}

impl MetricsReport {
    pub fn from_ranks(direction: Direction, reranked: bool, ranks: &[usize], rule: MedianRule) -> Result<Self> {
        let n = ranks.len() as f64;
        let recall = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Ok(MetricsReport {
            direction,
            reranked,
            queries: ranks.len(),
            r1: recall(1),
            r5: recall(5),
            r10: recall(10),
            median_rank: median_rank(ranks, rule)?,
            median_rule: rule,
        })
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "direction={} reranked={} queries={} r1={:.4} r5={:.4} r10={:.4} median_rank={} median_rule={}",
            self.direction.name(),
            self.reranked,
            self.queries,
            self.r1,
            self.r5,
            self.r10,
            self.median_rank,
            self.median_rule.name()
        )
    }
}

pub fn metrics(
    table: &RankingTable,
    positives: &[Vec<usize>],
    reranked: bool,
    rule: MedianRule,
) -> Result<MetricsReport> {
    let ranks = table.best_ranks(positives)?;
    MetricsReport::from_ranks(table.direction, reranked, &ranks, rule)
}

/// Both directions, joint-only and (optionally) reranked.
pub fn evaluate(
    model: &Model<f64>,
    data: &Dataset<f64>,
    with_rerank: bool,
    rule: MedianRule,
) -> Result<Vec<MetricsReport>> {
    let e = embed_dataset(model, data)?;
    let mut out = Vec::new();
    let modes: &[bool] = if with_rerank { &[false, true] } else { &[false] };
    for &reranked in modes {
        for dir in [Direction::CaptionToVideo, Direction::VideoToCaption] {
            let table = e.table(dir, reranked)?;
            out.push(metrics(&table, &dataset_positives(data, dir), reranked, rule)?);
        }
    }
    Ok(out)
}
