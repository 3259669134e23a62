// @vitest-environment happy-dom
import { describe, expect, it, vi } from 'vitest'

import type { EpisodeDetail, SearchResult } from '../src/api.js'
import {
  renderBreadcrumb,
  renderCards,
  renderDetail,
  renderScreenStrip,
  renderStatus,
} from '../src/render.js'

const results: SearchResult[] = [
  { episode_id: 'ep-2', rank: 1, score: 0.97, description: 'first', thumbnails: [] },
  {
    episode_id: 'ep-9',
    rank: 2,
    score: 0.91,
    description: 'second',
    thumbnails: ['/api/thumbnails/ep-9/0', '/api/thumbnails/ep-9/1'],
  },
  { episode_id: 'ep-1', rank: 3, score: 0.88, description: 'third', thumbnails: [] },
]

const detailOf = (id: string, n: number): EpisodeDetail => ({
  episode_id: id,
  description: 'detail',
  n_screens: n,
  archetype_label: 'arch-001',
  thumbnails: [],
})

const noop = { onOpen: () => {}, onQueryByExample: () => {} }

describe('cards', () => {
  it('renders results in rank order with verbatim ranks and scores', () => {
    const container = document.createElement('div')
    renderCards(container, results, new Map(), noop)
    const cards = [...container.querySelectorAll('.flow-card')]
    expect(cards.map((c) => c.getAttribute('data-episode-id'))).toEqual([
      'ep-2',
      'ep-9',
      'ep-1',
    ])
    expect(cards.map((c) => c.querySelector('.rank-badge')?.textContent)).toEqual([
      '#1',
      '#2',
      '#3',
    ])
    expect(cards[0]?.querySelector('.score')?.textContent).toBe('0.9700')
  })

  it('uses img thumbnails when present and placeholders otherwise', () => {
    const container = document.createElement('div')
    const details = new Map([['ep-2', detailOf('ep-2', 4)]])
    renderCards(container, results, details, noop)
    const cards = [...container.querySelectorAll('.flow-card')]
    // ep-2: no thumbnails, known screen count -> 4 placeholder boxes, no <img>
    expect(cards[0]?.querySelectorAll('img').length).toBe(0)
    expect(cards[0]?.querySelectorAll('.screen-placeholder').length).toBe(4)
    expect(cards[0]?.querySelector('.screen-count')?.textContent).toBe('4 screens')
    // ep-9: two thumbnails -> two images
    const imgs = [...cards[1]!.querySelectorAll('img')]
    expect(imgs.map((i) => i.getAttribute('src'))).toEqual([
      '/api/thumbnails/ep-9/0',
      '/api/thumbnails/ep-9/1',
    ])
  })

  it('wires card clicks to the navigation handlers', () => {
    const container = document.createElement('div')
    const onOpen = vi.fn()
    const onQueryByExample = vi.fn()
    renderCards(container, results, new Map(), { onOpen, onQueryByExample })
    const card = container.querySelector('.flow-card')!
    ;(card.querySelector('.open-btn') as HTMLButtonElement).click()
    expect(onOpen).toHaveBeenCalledWith(results[0])
    ;(card.querySelector('.query-btn') as HTMLButtonElement).click()
    expect(onQueryByExample).toHaveBeenCalledWith(results[0])
  })

  it('renders an empty message for zero results', () => {
    const container = document.createElement('div')
    renderCards(container, [], new Map(), noop)
    expect(container.querySelector('.empty')).not.toBeNull()
  })
})

describe('screen strip', () => {
  it('falls back to a single generic placeholder when the count is unknown', () => {
    const strip = renderScreenStrip([], null)
    expect(strip.querySelectorAll('.screen-placeholder').length).toBe(1)
    expect(strip.querySelector('.screen-count')).toBeNull()
  })
})

describe('breadcrumb', () => {
  it('shows lineage hops plus the current query and rewinds on click', () => {
    const container = document.createElement('div')
    const onHop = vi.fn()
    renderBreadcrumb(container, ['ep-a', 'ep-b'], 'ep-c', onHop)
    const crumbs = [...container.querySelectorAll('button.crumb')]
    expect(crumbs.map((c) => c.textContent)).toEqual(['ep-a', 'ep-b'])
    expect(container.querySelector('.crumb.current')?.textContent).toBe('ep-c')
    ;(crumbs[1] as HTMLButtonElement).click()
    expect(onHop).toHaveBeenCalledWith('ep-b', 1)
  })
})

describe('detail view', () => {
  it('shows screen count, archetype label, and provenance', () => {
    const container = document.createElement('div')
    renderDetail(container, detailOf('ep-5', 5), { rank: 2, score: 0.91 }, () => {})
    const text = container.textContent ?? ''
    expect(container.querySelectorAll('.screen-placeholder').length).toBe(5)
    expect(text).toContain('arch-001')
    expect(text).toContain('#2')
    expect(text).toContain('0.9100')
  })
})

describe('status line', () => {
  it('replaces results-adjacent status without stale content', () => {
    const status = document.createElement('div')
    renderStatus(status, 'error', 'embedder_unavailable: boom')
    expect(status.className).toContain('error')
    expect(status.textContent).toContain('embedder_unavailable')
    renderStatus(status, 'idle')
    expect(status.textContent).toBe('')
  })
})
