// Controller: URL state in, API calls out, DOM via render.ts. Concurrent
// searches resolve last-submitted-wins through AbortController; popstate
// re-renders from the URL so back/forward restore earlier result sets.

import {
  ApiError,
  getEpisode,
  getHealth,
  searchSequence,
  searchText,
  type EpisodeDetail,
  type SearchResult,
} from './api.js'
import {
  renderBreadcrumb,
  renderCards,
  renderDetail,
  renderStatus,
} from './render.js'
import {
  DEFAULT_K,
  K_CHOICES,
  decodeState,
  defaultState,
  encodeState,
  hopToFlow,
  type ViewState,
} from './state.js'

interface Ui {
  form: HTMLFormElement
  input: HTMLInputElement
  kSelect: HTMLSelectElement
  submit: HTMLButtonElement
  status: HTMLElement
  breadcrumb: HTMLElement
  results: HTMLElement
  detail: HTMLElement
  health: HTMLElement
}

let controller: AbortController | null = null
let current: ViewState = defaultState()

function ui(): Ui {
  const get = <T extends HTMLElement>(id: string): T => {
    const node = document.getElementById(id)
    if (!node) throw new Error(`missing #${id}`)
    return node as T
  }
  return {
    form: get<HTMLFormElement>('search-form'),
    input: get<HTMLInputElement>('query-input'),
    kSelect: get<HTMLSelectElement>('k-select'),
    submit: get<HTMLButtonElement>('submit-btn'),
    status: get('status'),
    breadcrumb: get('breadcrumb'),
    results: get('results'),
    detail: get('detail'),
    health: get('health'),
  }
}

function navigate(state: ViewState, push = true): void {
  current = state
  if (push) history.pushState(null, '', encodeState(state))
  void render(state)
}

async function detailsFor(
  results: SearchResult[],
  signal: AbortSignal,
): Promise<Map<string, EpisodeDetail>> {
  const map = new Map<string, EpisodeDetail>()
  const bare = results.filter((r) => r.thumbnails.length === 0)
  await Promise.all(
    bare.map(async (r) => {
      try {
        map.set(r.episode_id, await getEpisode(r.episode_id, signal))
      } catch {
        // placeholder falls back to a generic strip
      }
    }),
  )
  return map
}

async function render(state: ViewState): Promise<void> {
  const view = ui()
  controller?.abort()
  controller = new AbortController()
  const signal = controller.signal

  view.input.value = state.view === 'search' ? state.q : ''
  const k = state.view === 'episode' ? DEFAULT_K : state.k
  view.kSelect.value = String(k)
  view.submit.disabled = view.input.value.trim().length === 0
  view.detail.textContent = ''

  renderBreadcrumb(
    view.breadcrumb,
    state.view === 'search' ? [] : state.lineage,
    state.view === 'flow' || state.view === 'episode' ? state.id : null,
    (id, depth) => {
      const lineage = state.view === 'search' ? [] : state.lineage
      navigate({ view: 'flow', id, k, lineage: lineage.slice(0, depth) })
    },
  )

  const handlers = {
    onOpen: (r: SearchResult) =>
      navigate({
        view: 'episode',
        id: r.episode_id,
        lineage: state.view === 'search' ? [] : lineageWithCurrent(state),
        rank: r.rank,
        score: r.score,
      }),
    onQueryByExample: (r: SearchResult) => navigate(hopToFlow(state, r.episode_id, k)),
  }

  try {
    if (state.view === 'search') {
      if (!state.q.trim()) {
        view.results.textContent = ''
        renderStatus(view.status, 'idle')
        return
      }
      renderStatus(view.status, 'loading')
      const results = await searchText(state.q, state.k, signal)
      const details = await detailsFor(results, signal)
      if (signal.aborted) return
      renderCards(view.results, results, details, handlers)
      renderStatus(view.status, 'idle')
    } else if (state.view === 'flow') {
      renderStatus(view.status, 'loading')
      const results = await searchSequence(state.id, state.k, signal)
      const details = await detailsFor(results, signal)
      if (signal.aborted) return
      renderCards(view.results, results, details, handlers)
      renderStatus(view.status, 'idle')
    } else {
      renderStatus(view.status, 'loading')
      const detail = await getEpisode(state.id, signal)
      if (signal.aborted) return
      view.results.textContent = ''
      renderDetail(
        view.detail,
        detail,
        { rank: state.rank, score: state.score },
        (id) => navigate(hopToFlow(state, id, DEFAULT_K)),
      )
      renderStatus(view.status, 'idle')
    }
  } catch (err) {
    if (err instanceof DOMException && err.name === 'AbortError') return
    if (signal.aborted) return
    view.results.textContent = '' // no stale results next to an error
    const message = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err)
    renderStatus(view.status, 'error', message)
  }
}

function lineageWithCurrent(state: ViewState): string[] {
  if (state.view === 'flow') return [...state.lineage, state.id]
  if (state.view === 'episode') return state.lineage
  return []
}

export function boot(): void {
  const view = ui()
  for (const k of K_CHOICES) {
    const option = document.createElement('option')
    option.value = String(k)
    option.textContent = `top ${k}`
    view.kSelect.appendChild(option)
  }
  view.kSelect.value = String(DEFAULT_K)

  view.input.addEventListener('input', () => {
    view.submit.disabled = view.input.value.trim().length === 0
  })
  view.form.addEventListener('submit', (event) => {
    event.preventDefault()
    const q = view.input.value.trim()
    if (!q) return
    navigate({ view: 'search', q, k: Number(view.kSelect.value) || DEFAULT_K })
  })
  view.kSelect.addEventListener('change', () => {
    const k = Number(view.kSelect.value) || DEFAULT_K
    if (current.view === 'search' && current.q) {
      navigate({ ...current, k })
    } else if (current.view === 'flow') {
      navigate({ ...current, k })
    }
  })
  window.addEventListener('popstate', () => {
    navigate(decodeState(location.search), false)
  })

  getHealth()
    .then((h) => {
      view.health.textContent = `${h.index_size} flows indexed · model ${h.model_id.slice(0, 12)}`
    })
    .catch(() => {
      view.health.textContent = 'service unreachable'
    })

  navigate(decodeState(location.search), false)
}

boot()
