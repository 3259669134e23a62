// Typed client for the retrieval service. The UI never reorders or
// re-scores anything: results are returned exactly as the service ranked
// them.

export interface SearchResult {
  episode_id: string
  rank: number
  score: number
  description: string
  thumbnails: string[]
}

export interface EpisodeDetail {
  episode_id: string
  description: string
  n_screens: number
  archetype_label: string | null
  thumbnails: string[]
}

export interface HealthInfo {
  status: string
  index_size: number
  model_id: string
}

export class ApiError extends Error {
  readonly code: string
  readonly status: number

  constructor(code: string, message: string, status: number) {
    super(message)
    this.code = code
    this.status = status
  }
}

async function request<T>(path: string, init: RequestInit = {}): Promise<T> {
  let response: Response
  try {
    response = await fetch(path, init)
  } catch (err) {
    if (err instanceof DOMException && err.name === 'AbortError') throw err
    throw new ApiError('network', `cannot reach the service: ${String(err)}`, 0)
  }
  let body: unknown = null
  try {
    body = await response.json()
  } catch {
    // non-JSON body: fall through to the status check
  }
  if (!response.ok) {
    const error = (body as { error?: { code?: string; message?: string } })?.error
    throw new ApiError(
      error?.code ?? 'http_error',
      error?.message ?? `request failed with status ${response.status}`,
      response.status,
    )
  }
  return body as T
}

export function searchText(
  query: string,
  k: number,
  signal?: AbortSignal,
): Promise<SearchResult[]> {
  return request<{ results: SearchResult[] }>('/api/search/text', {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify({ query, k }),
    signal,
  }).then((r) => r.results)
}

export function searchSequence(
  episodeId: string,
  k: number,
  signal?: AbortSignal,
): Promise<SearchResult[]> {
  return request<{ results: SearchResult[] }>('/api/search/sequence', {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify({ episode_id: episodeId, k }),
    signal,
  }).then((r) => r.results)
}

export function getEpisode(
  episodeId: string,
  signal?: AbortSignal,
): Promise<EpisodeDetail> {
  return request<EpisodeDetail>(
    `/api/episodes/${encodeURIComponent(episodeId)}`,
    { signal },
  )
}

export function getHealth(): Promise<HealthInfo> {
  return request<HealthInfo>('/api/health')
}
