// DOM builders. Pure construction from data: no fetching, no sorting, no
// score math; ranks and scores render verbatim as the service sent them.

import type { EpisodeDetail, SearchResult } from './api.js'

export interface CardHandlers {
  onOpen: (result: SearchResult) => void
  onQueryByExample: (result: SearchResult) => void
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag)
  if (className) node.className = className
  if (text !== undefined) node.textContent = text
  return node
}

/** Thumbnail strip, or a schematic placeholder strip showing screen count. */
export function renderScreenStrip(
  thumbnails: string[],
  screenCount: number | null,
): HTMLElement {
  const strip = el('div', 'screen-strip')
  if (thumbnails.length > 0) {
    for (const [i, url] of thumbnails.entries()) {
      const img = el('img', 'screen-thumb') as HTMLImageElement
      img.src = url
      img.alt = `screen ${i + 1}`
      img.loading = 'lazy'
      strip.appendChild(img)
    }
    return strip
  }
  const count = screenCount ?? 1
  strip.classList.add('placeholder')
  for (let i = 0; i < count; i++) {
    const box = el('div', 'screen-placeholder')
    box.appendChild(el('span', 'screen-number', String(i + 1)))
    strip.appendChild(box)
  }
  if (screenCount !== null) {
    strip.appendChild(el('span', 'screen-count', `${screenCount} screens`))
  }
  return strip
}

export function renderCard(
  result: SearchResult,
  detail: EpisodeDetail | null,
  handlers: CardHandlers,
): HTMLElement {
  const card = el('article', 'flow-card')
  card.dataset['episodeId'] = result.episode_id

  const head = el('header', 'card-head')
  head.appendChild(el('span', 'rank-badge', `#${result.rank}`))
  head.appendChild(el('span', 'episode-id', result.episode_id))
  head.appendChild(el('span', 'score', result.score.toFixed(4)))
  card.appendChild(head)

  card.appendChild(
    renderScreenStrip(result.thumbnails, detail ? detail.n_screens : null),
  )
  card.appendChild(el('p', 'description', result.description))

  const actions = el('div', 'card-actions')
  const open = el('button', 'open-btn', 'details')
  open.type = 'button'
  open.addEventListener('click', () => handlers.onOpen(result))
  const reuse = el('button', 'query-btn', 'use as query')
  reuse.type = 'button'
  reuse.addEventListener('click', () => handlers.onQueryByExample(result))
  actions.appendChild(open)
  actions.appendChild(reuse)
  card.appendChild(actions)
  return card
}

export function renderCards(
  container: HTMLElement,
  results: SearchResult[],
  details: Map<string, EpisodeDetail>,
  handlers: CardHandlers,
): void {
  container.textContent = ''
  if (results.length === 0) {
    container.appendChild(el('p', 'empty', 'no results'))
    return
  }
  for (const result of results) {
    container.appendChild(
      renderCard(result, details.get(result.episode_id) ?? null, handlers),
    )
  }
}

export function renderBreadcrumb(
  container: HTMLElement,
  lineage: string[],
  currentId: string | null,
  onHop: (episodeId: string, depth: number) => void,
): void {
  container.textContent = ''
  if (lineage.length === 0 && currentId === null) return
  for (const [depth, id] of lineage.entries()) {
    const link = el('button', 'crumb', id)
    link.type = 'button'
    link.addEventListener('click', () => onHop(id, depth))
    container.appendChild(link)
    container.appendChild(el('span', 'crumb-sep', '>'))
  }
  if (currentId !== null) {
    container.appendChild(el('span', 'crumb current', currentId))
  }
}

export interface Provenance {
  rank?: number
  score?: number
}

export function renderDetail(
  container: HTMLElement,
  detail: EpisodeDetail,
  provenance: Provenance,
  onQueryByExample: (episodeId: string) => void,
): void {
  container.textContent = ''
  const panel = el('article', 'episode-detail')
  panel.appendChild(el('h2', 'detail-title', detail.episode_id))
  panel.appendChild(el('p', 'description', detail.description))

  const facts = el('dl', 'facts')
  const fact = (name: string, value: string) => {
    facts.appendChild(el('dt', undefined, name))
    facts.appendChild(el('dd', undefined, value))
  }
  fact('screens', String(detail.n_screens))
  if (detail.archetype_label) fact('archetype', detail.archetype_label)
  if (provenance.rank !== undefined) fact('retrieved at rank', `#${provenance.rank}`)
  if (provenance.score !== undefined) fact('score', provenance.score.toFixed(4))
  panel.appendChild(facts)

  panel.appendChild(renderScreenStrip(detail.thumbnails, detail.n_screens))

  const reuse = el('button', 'query-btn', 'use as query')
  reuse.type = 'button'
  reuse.addEventListener('click', () => onQueryByExample(detail.episode_id))
  panel.appendChild(reuse)
  container.appendChild(panel)
}

export function renderStatus(
  container: HTMLElement,
  kind: 'idle' | 'loading' | 'error',
  message = '',
): void {
  container.textContent = ''
  container.className = `status ${kind}`
  if (kind === 'loading') container.textContent = 'searching…'
  if (kind === 'error') container.textContent = message || 'request failed'
}
