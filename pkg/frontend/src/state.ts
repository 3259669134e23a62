// URL-addressable view state: every view is reconstructable from its query
// string, so a hard refresh (or a pasted link) reproduces it exactly.

export const K_CHOICES = [5, 10, 20, 50] as const
export const DEFAULT_K = 10

export interface TextSearchState {
  view: 'search'
  q: string
  k: number
}

export interface FlowSearchState {
  view: 'flow'
  id: string
  k: number
  lineage: string[] // earlier query-by-example hops, oldest first
}

export interface EpisodeState {
  view: 'episode'
  id: string
  lineage: string[]
  rank?: number
  score?: number
}

export type ViewState = TextSearchState | FlowSearchState | EpisodeState

export function defaultState(): TextSearchState {
  return { view: 'search', q: '', k: DEFAULT_K }
}

function parseK(raw: string | null): number {
  const k = Number(raw)
  return Number.isInteger(k) && k >= 1 && k <= 100 ? k : DEFAULT_K
}

function parseLineage(raw: string | null): string[] {
  if (!raw) return []
  return raw.split(',').filter((s) => s.length > 0)
}

export function decodeState(search: string): ViewState {
  const params = new URLSearchParams(search)
  const view = params.get('view')
  if (view === 'flow') {
    const id = params.get('id')
    if (id) {
      return {
        view: 'flow',
        id,
        k: parseK(params.get('k')),
        lineage: parseLineage(params.get('lineage')),
      }
    }
  }
  if (view === 'episode') {
    const id = params.get('id')
    if (id) {
      const state: EpisodeState = {
        view: 'episode',
        id,
        lineage: parseLineage(params.get('lineage')),
      }
      const rank = Number(params.get('rank'))
      const score = Number(params.get('score'))
      if (Number.isInteger(rank) && rank >= 1) state.rank = rank
      if (Number.isFinite(score) && params.get('score') !== null) state.score = score
      return state
    }
  }
  return {
    view: 'search',
    q: params.get('q') ?? '',
    k: parseK(params.get('k')),
  }
}

export function encodeState(state: ViewState): string {
  const params = new URLSearchParams()
  params.set('view', state.view)
  if (state.view === 'search') {
    if (state.q) params.set('q', state.q)
    params.set('k', String(state.k))
  } else if (state.view === 'flow') {
    params.set('id', state.id)
    params.set('k', String(state.k))
    if (state.lineage.length) params.set('lineage', state.lineage.join(','))
  } else {
    params.set('id', state.id)
    if (state.lineage.length) params.set('lineage', state.lineage.join(','))
    if (state.rank !== undefined) params.set('rank', String(state.rank))
    if (state.score !== undefined) params.set('score', String(state.score))
  }
  return `?${params.toString()}`
}

/** The next query-by-example hop: the current query joins the lineage. */
export function hopToFlow(current: ViewState, episodeId: string, k: number): FlowSearchState {
  const lineage =
    current.view === 'flow' ? [...current.lineage, current.id] : [...currentLineage(current)]
  return { view: 'flow', id: episodeId, k, lineage }
}

function currentLineage(state: ViewState): string[] {
  return state.view === 'search' ? [] : state.lineage
}
